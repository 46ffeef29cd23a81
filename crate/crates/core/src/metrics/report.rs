use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{RoiSet, Score};
use crate::raster::Polarization;

/// Metrics for one (scene, polarization, method, refinement pass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub polarization: Polarization,
    pub method: String,
    pub refinement_pass: usize,
    pub psnr_db: Score,
    pub ssim: f64,
    /// `ssim * 100`, the scale used in published tables.
    pub ssim_pct: f64,
    pub enl: f64,
    pub kde_distance: f64,
}

/// Mean over test scenes for one (method, pass, polarization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub refinement_pass: usize,
    pub polarization: Polarization,
    pub scenes: usize,
    pub psnr_db: Score,
    pub ssim: f64,
    pub ssim_pct: f64,
    pub enl: f64,
    pub kde_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub aggregates: Vec<Aggregate>,
    pub rois: RoiSet,
}

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>, rois: RoiSet) -> Self {
        let mut report = Self {
            records,
            aggregates: Vec::new(),
            rois,
        };
        report.aggregate();
        report
    }

    /// Recomputes `aggregates` from `records`.
    pub fn aggregate(&mut self) {
        let mut groups: BTreeMap<(String, usize, Polarization), Vec<&EvalRecord>> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry((r.method.clone(), r.refinement_pass, r.polarization))
                .or_default()
                .push(r);
        }
        self.aggregates = groups
            .into_iter()
            .map(|((method, refinement_pass, polarization), rs)| {
                let n = rs.len() as f64;
                let mean = |f: fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
                let psnr: Vec<Score> = rs.iter().map(|r| r.psnr_db).collect();
                Aggregate {
                    method,
                    refinement_pass,
                    polarization,
                    scenes: rs.len(),
                    psnr_db: Score::mean(&psnr).expect("non-empty group"),
                    ssim: mean(|r| r.ssim),
                    ssim_pct: mean(|r| r.ssim_pct),
                    enl: mean(|r| r.enl),
                    kde_distance: mean(|r| r.kde_distance),
                }
            })
            .collect();
    }

    /// Text table: one row per method and pass, SSIM / PSNR / ENL per polarization.
    pub fn table(&self) -> String {
        let mut rows: BTreeMap<(String, usize), BTreeMap<Polarization, &Aggregate>> = BTreeMap::new();
        for a in &self.aggregates {
            rows.entry((a.method.clone(), a.refinement_pass))
                .or_default()
                .insert(a.polarization, a);
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8}",
            "", "SSIM", "", "PSNR", "", "ENL", ""
        );
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8}",
            "Method", "VV", "VH", "VV", "VH", "VV", "VH"
        );
        let _ = writeln!(out, "{}", "-".repeat(76));
        for ((method, pass), by_pol) in rows {
            let name = if pass == 0 {
                method
            } else {
                format!("{method} +{pass}")
            };
            let cell = |pol: Polarization, f: &dyn Fn(&Aggregate) -> String| {
                by_pol.get(&pol).map_or_else(|| "-".to_string(), |a| f(a))
            };
            let ssim = |a: &Aggregate| format!("{:.1}", a.ssim_pct);
            let psnr = |a: &Aggregate| a.psnr_db.to_string();
            let enl = |a: &Aggregate| format!("{:.1}", a.enl);
            let _ = writeln!(
                out,
                "{:<24} {:>7} {:>7} {:>8} {:>8} {:>8} {:>8}",
                name,
                cell(Polarization::VV, &ssim),
                cell(Polarization::VH, &ssim),
                cell(Polarization::VV, &psnr),
                cell(Polarization::VH, &psnr),
                cell(Polarization::VV, &enl),
                cell(Polarization::VH, &enl),
            );
        }
        out
    }
}
