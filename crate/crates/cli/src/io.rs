//! File formats: fit rows, rate-study rows, effective-dimension tables,
//! pairwise family tables, theta matrices, and the sample-set CSV with
//! its JSON sidecar.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use invlearn_core::experiments::{NoiseMeta, NoiseModel, RateRow, SampleSet};
use invlearn_core::tikhonov::TikhonovFit;

use crate::error::{CliError, Result};

/// One row of the fit CSV; error columns stay empty when no truth is
/// known.
pub fn write_fit_csv(
    path: &Path,
    m: usize,
    fit: &TikhonovFit,
    err_h1: Option<f64>,
    err_pred: Option<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "m",
        "lambda",
        "gn_iters",
        "converged",
        "residual_norm",
        "h1_penalty",
        "err_h1",
        "err_pred",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        m.to_string(),
        fit.lambda.to_string(),
        fit.gn_iters.to_string(),
        fit.converged.to_string(),
        fit.residual_norm.to_string(),
        fit.h1_penalty.to_string(),
        fmt(err_h1),
        fmt(err_pred),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_rate_rows_csv(path: &Path, rows: &[RateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "m",
        "replicate",
        "lambda",
        "err_h1",
        "err_pred",
        "seconds",
        "converged",
        "gn_iters",
        "condition_held",
    ])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.replicate.to_string(),
            r.lambda.to_string(),
            r.err_h1.to_string(),
            r.err_pred.to_string(),
            r.seconds.to_string(),
            r.converged.to_string(),
            r.gn_iters.to_string(),
            r.condition_held.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_effdim_csv(path: &Path, rows: &[(f64, f64, f64, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "value", "trivial_bound", "decay_bound"])?;
    for (lambda, value, trivial, decay) in rows {
        w.write_record([
            lambda.to_string(),
            value.to_string(),
            trivial.to_string(),
            decay.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs_csv(path: &Path, rows: &[(f64, usize, usize, f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "i", "j", "h1_gap", "pred_gap_sq", "kl"])?;
    for (eps, i, j, gap, pred, kl) in rows {
        w.write_record([
            eps.to_string(),
            i.to_string(),
            j.to_string(),
            gap.to_string(),
            pred.to_string(),
            kl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Theta matrix from CSV: row = evaluation node, column = grid node.
pub fn read_theta_matrix(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::config(format!("theta csv {}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        if record.len() != n {
            return Err(CliError::config(format!(
                "theta csv row {rows} has {} columns, grid has {n} nodes",
                record.len()
            )));
        }
        for field in record.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::config(format!("theta csv: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows != n {
        return Err(CliError::config(format!(
            "theta csv has {rows} rows, grid has {n} nodes"
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, &data))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSidecar {
    model: String,
    sigma: f64,
    m_cert: f64,
    sigma_cert: f64,
    seed: u64,
}

/// Write a sample set as `<stem>.csv` (header `x,y`) plus
/// `<stem>.meta.json` carrying the noise metadata and seed.
pub fn write_sample_set(dir: &Path, stem: &str, data: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["x", "y"])?;
    for i in 0..data.len() {
        w.write_record([data.x[i].to_string(), data.y[i].to_string()])?;
    }
    w.flush()?;
    let (model, sigma) = match data.noise.model {
        NoiseModel::Gaussian { sigma } => ("gaussian", sigma),
        NoiseModel::TruncatedGaussian { sigma } => ("truncated_gaussian", sigma),
    };
    let sidecar = NoiseSidecar {
        model: model.to_string(),
        sigma,
        m_cert: data.noise.m_cert,
        sigma_cert: data.noise.sigma_cert,
        seed: data.seed,
    };
    std::fs::write(
        dir.join(format!("{stem}.meta.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Read a sample set back from `<stem>.csv` + `<stem>.meta.json`; the
/// sidecar is optional for externally produced data (zero-noise metadata
/// is assumed then).
pub fn read_sample_set(dir: &Path, stem: &str) -> Result<SampleSet> {
    read_sample_set_from(&dir.join(format!("{stem}.csv")))
}

/// Read a sample set from an explicit CSV path, looking for the sidecar
/// next to it.
pub fn read_sample_set_from(csv_path: &Path) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| CliError::config(format!("sample csv {}: {e}", csv_path.display())))?;
    {
        let headers = rdr.headers()?;
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(CliError::config(format!(
                "sample csv {} must have header x,y",
                csv_path.display()
            )));
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for record in rdr.records() {
        let record = record?;
        x.push(
            record[0]
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::config(format!("sample csv x: {e}")))?,
        );
        y.push(
            record[1]
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::config(format!("sample csv y: {e}")))?,
        );
    }
    let sidecar_path = csv_path.with_extension("").with_extension("meta.json");
    let (noise, seed) = if sidecar_path.exists() {
        let text = std::fs::read_to_string(&sidecar_path)?;
        let sc: NoiseSidecar = serde_json::from_str(&text)?;
        let model = match sc.model.as_str() {
            "gaussian" => NoiseModel::Gaussian { sigma: sc.sigma },
            "truncated_gaussian" => NoiseModel::TruncatedGaussian { sigma: sc.sigma },
            other => {
                return Err(CliError::config(format!(
                    "sample sidecar: unknown noise model \"{other}\""
                )))
            }
        };
        (
            NoiseMeta {
                model,
                m_cert: sc.m_cert,
                sigma_cert: sc.sigma_cert,
            },
            sc.seed,
        )
    } else {
        (
            NoiseMeta {
                model: NoiseModel::Gaussian { sigma: 0.0 },
                m_cert: 0.0,
                sigma_cert: 0.0,
            },
            0,
        )
    };
    SampleSet::new(x, y, seed, noise).map_err(CliError::from)
}
