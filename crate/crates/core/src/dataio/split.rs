use serde::{Deserialize, Serialize};

use crate::dataio::{RawSeries, Segment};
use crate::error::{Result, StairError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitProtocol {
    /// 12/4/4 months of hourly data.
    EttHourly,
    /// 12/4/4 months of 15-minute data.
    EttMinutely,
    /// 70/10/20 percent of the series.
    #[serde(rename = "ratio-7-1-2")]
    Ratio712,
}

impl SplitProtocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ett-hourly" => Some(Self::EttHourly),
            "ett-minutely" => Some(Self::EttMinutely),
            "ratio-7-1-2" => Some(Self::Ratio712),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub protocol: SplitProtocol,
    pub lookback: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
}

const MONTH_HOURS: usize = 30 * 24;

/// Boundaries `(train_end, val_end, test_end)` in source rows.
fn boundaries(protocol: SplitProtocol, len: usize) -> (usize, usize, usize) {
    match protocol {
        SplitProtocol::EttHourly => (12 * MONTH_HOURS, 16 * MONTH_HOURS, 20 * MONTH_HOURS),
        SplitProtocol::EttMinutely => {
            (12 * MONTH_HOURS * 4, 16 * MONTH_HOURS * 4, 20 * MONTH_HOURS * 4)
        }
        SplitProtocol::Ratio712 => {
            let train = (len as f64 * 0.7) as usize;
            let test = (len as f64 * 0.2) as usize;
            let val = len - train - test;
            (train, train + val, len)
        }
    }
}

/// Splits a series into train/val/test. Val and test are prefixed with the
/// last `lookback` rows of the preceding split so their first window's
/// target starts exactly at the split boundary.
pub fn split(series: &RawSeries, spec: SplitSpec) -> Result<Splits> {
    let (train_end, val_end, test_end) = boundaries(spec.protocol, series.len);
    if test_end > series.len {
        return Err(StairError::TooShort(format!(
            "{:?} needs {test_end} rows, series has {}",
            spec.protocol, series.len
        )));
    }
    if spec.lookback > train_end || spec.lookback > val_end - train_end {
        return Err(StairError::TooShort(format!(
            "look-back {} exceeds a split segment (train {train_end}, val {})",
            spec.lookback,
            val_end - train_end
        )));
    }
    let l = spec.lookback;
    Ok(Splits {
        train: series.segment(0, train_end, 0),
        val: series.segment(train_end - l, val_end, l),
        test: series.segment(val_end - l, test_end, l),
    })
}
