use crate::error::{Error, Result};
use crate::trace::IterationTrace;

/// Percentage PSNR improvement over the starting iterate, per iteration.
pub fn improvement_series(trace: &IterationTrace) -> Result<Vec<f64>> {
    let psnr = trace.psnr_series().ok_or(Error::MissingGroundTruth)?;
    let p0 = *psnr.first().ok_or(Error::Empty("trace"))?;
    if p0 == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(psnr.iter().map(|p| (p - p0) / p0 * 100.0).collect())
}

/// Largest value of [`improvement_series`].
pub fn max_improvement(trace: &IterationTrace) -> Result<f64> {
    Ok(improvement_series(trace)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementSummary {
    pub filter: String,
    pub method: String,
    pub accel: String,
    /// `(image id, max improvement)` in input order.
    pub per_image: Vec<(String, f64)>,
    pub p_max: f64,
    /// Images whose run was flagged as non-convergent.
    pub diverged: usize,
}

impl ImprovementSummary {
    pub fn image_count(&self) -> usize {
        self.per_image.len()
    }

    pub fn converged(&self) -> bool {
        self.diverged == 0
    }
}

/// Mean over images of each trace's maximum improvement.
pub fn aggregate_pmax(traces: &[IterationTrace]) -> Result<ImprovementSummary> {
    let first = traces.first().ok_or(Error::Empty("trace list"))?;
    let mut per_image = Vec::with_capacity(traces.len());
    for t in traces {
        if (&t.filter, &t.method, &t.accel) != (&first.filter, &first.method, &first.accel) {
            return Err(Error::Config(format!(
                "cannot aggregate {}/{}/{} with {}/{}/{}",
                t.filter, t.method, t.accel, first.filter, first.method, first.accel
            )));
        }
        per_image.push((t.image_id.clone(), max_improvement(t)?));
    }
    let p_max = per_image.iter().map(|(_, v)| v).sum::<f64>() / per_image.len() as f64;
    Ok(ImprovementSummary {
        filter: first.filter.clone(),
        method: first.method.clone(),
        accel: first.accel.clone(),
        diverged: traces.iter().filter(|t| t.diverged).count(),
        per_image,
        p_max,
    })
}
