use std::ops::Range;

use crate::error::{Error, Result};

/// One line of the run log: `day<TAB>action<TAB>window<TAB>k=v,...`.
/// Windows print as inclusive `first-last` day ranges, `-` when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub day: u32,
    pub action: String,
    /// Half-open training-data day range.
    pub window: Option<Range<u32>>,
    pub metrics: Vec<(String, String)>,
}

impl Event {
    pub fn to_line(&self) -> String {
        let window = match &self.window {
            Some(w) if !w.is_empty() => format!("{}-{}", w.start, w.end - 1),
            _ => "-".to_string(),
        };
        let metrics = if self.metrics.is_empty() {
            "-".to_string()
        } else {
            self.metrics
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{}\t{}\t{window}\t{metrics}", self.day, self.action)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed event line `{line}`"));
        let cols: Vec<&str> = line.split('\t').collect();
        let [day, action, window, metrics] = cols[..] else {
            return Err(bad());
        };
        let day = day.parse().map_err(|_| bad())?;
        let window = if window == "-" {
            None
        } else {
            let (a, b) = window.split_once('-').ok_or_else(bad)?;
            let a: u32 = a.parse().map_err(|_| bad())?;
            let b: u32 = b.parse().map_err(|_| bad())?;
            Some(a..b + 1)
        };
        let metrics = if metrics == "-" {
            Vec::new()
        } else {
            metrics
                .split(',')
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(bad)
                })
                .collect::<Result<_>>()?
        };
        Ok(Self {
            day,
            action: action.to_string(),
            window,
            metrics,
        })
    }

    pub fn metric(&self, key: &str) -> Option<&str> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn parse_event_log(text: &str) -> Result<Vec<Event>> {
    text.lines().filter(|l| !l.is_empty()).map(Event::parse).collect()
}
