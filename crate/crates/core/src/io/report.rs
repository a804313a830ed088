//! Flat TOML key-value reports. Absent values are omitted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDocument {
    pub frames: u64,
    pub epe_mean_cm: f64,
    pub epe_fd_cm: f64,
    pub epe_fs_cm: f64,
    pub epe_bs_cm: f64,
    pub points_fd: u64,
    pub points_fs: u64,
    pub points_bs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_car: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_other: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_ped: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_vru: Option<f64>,
}

impl EvalDocument {
    pub fn new(report: &EvalReport, frames: usize) -> Self {
        let t = &report.threeway;
        let b = &report.bucket;
        Self {
            frames: frames as u64,
            epe_mean_cm: t.mean,
            epe_fd_cm: t.fd,
            epe_fs_cm: t.fs,
            epe_bs_cm: t.bs,
            points_fd: t.counts[0] as u64,
            points_fs: t.counts[1] as u64,
            points_bs: t.counts[2] as u64,
            bucket_mean: b.mean,
            bucket_car: b.ratios[0],
            bucket_other: b.ratios[1],
            bucket_ped: b.ratios[2],
            bucket_vru: b.ratios[3],
        }
    }
}

/// Loss values averaged over frame pairs, with the weights that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossDocument {
    pub frames: u64,
    pub l_deflow: f64,
    pub l_category: f64,
    pub l_instance: f64,
    pub l_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_check_max_rel_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_check_points: Option<u64>,
    pub weights: LossWeights,
}

pub fn to_toml<T: Serialize>(doc: &T) -> Result<String> {
    toml::to_string(doc).map_err(|e| Error::invalid(format!("report serialization: {e}")))
}

pub fn from_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let at = e.span().map_or(0, |s| s.start as u64);
        Error::format(at, format!("report: {}", e.message()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_buckets_are_omitted() {
        let doc = EvalDocument {
            frames: 1,
            epe_mean_cm: 0.0,
            epe_fd_cm: 0.0,
            epe_fs_cm: 0.0,
            epe_bs_cm: 0.0,
            points_fd: 0,
            points_fs: 0,
            points_bs: 3,
            bucket_mean: None,
            bucket_car: None,
            bucket_other: None,
            bucket_ped: Some(1.0),
            bucket_vru: None,
        };
        let text = to_toml(&doc).unwrap();
        assert!(!text.contains("bucket_car"));
        assert!(text.contains("bucket_ped = 1.0"));
        let back: EvalDocument = from_toml(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(to_toml(&back).unwrap(), text);
    }

    #[test]
    fn loss_report_echoes_weights() {
        let doc = LossDocument {
            frames: 2,
            l_deflow: 0.5,
            l_category: 0.25,
            l_instance: 0.0,
            l_total: 0.75,
            grad_check_max_rel_error: None,
            grad_check_points: None,
            weights: LossWeights::default(),
        };
        let text = to_toml(&doc).unwrap();
        assert!(text.contains("category_weights = [1.0, 1.5, 2.0, 2.5]"), "{text}");
        assert!(text.contains("speed_weights = [0.1, 0.4, 0.5]"));
        assert_eq!(from_toml::<LossDocument>(&text).unwrap(), doc);
    }
}
