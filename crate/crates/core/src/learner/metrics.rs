use std::io::Write;

use super::TrainMetrics;

/// Column order of the per-update metrics CSV.
pub const METRICS_HEADER: &str =
    "step,env_steps,arch,regime,accuracy,mean_return,policy_loss,value_loss,entropy,recon_loss,ngu_lang,ngu_im,seed";

/// One CSV row per update. Accuracy and return are left empty when no
/// episode finished during the update's rollout.
pub struct MetricsWriter<W: Write> {
    out: W,
    arch: String,
    regime: String,
    seed: u64,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, arch: &str, regime: &str, seed: u64) -> std::io::Result<Self> {
        if arch.contains(',') || regime.contains(',') {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "labels must not contain commas"));
        }
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out, arch: arch.to_string(), regime: regime.to_string(), seed })
    }

    pub fn record(&mut self, m: &TrainMetrics) -> std::io::Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.step,
            m.env_steps,
            self.arch,
            self.regime,
            opt(m.accuracy),
            opt(m.mean_return),
            m.loss.policy,
            m.loss.value,
            m.loss.entropy,
            m.loss.recon,
            m.ngu_lang,
            m.ngu_im,
            self.seed
        )
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
