//! Full-batch gradient descent with periodic metric logging, run
//! persistence and Cartesian hyper-parameter sweeps.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::{format_f64, layer_metrics, LayerMetrics};
use crate::model::{loss_and_gradient, DufmDims, DufmParams, InitScale, ParamsFile, RegConfig};
use crate::rng::{mix64, Rng, PRNG_NAME};
use crate::theory::{theoretical_optimum, Regime};

/// A run aborts once the total loss exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: DufmDims,
    pub reg: RegConfig,
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub save_params: bool,
    #[serde(default)]
    pub init: InitScale,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.reg.validate(&self.dims)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if self.log_every == 0 || self.log_every > self.steps {
            return Err(invalid(format!("log_every must be in 1..=steps, got {}", self.log_every)));
        }
        if !(self.init.weight_gain >= 0.0 && self.init.feature_std >= 0.0) {
            return Err(invalid("init scales must be non-negative"));
        }
        Ok(())
    }
}

/// Loss terms and per-layer metrics at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub total: f64,
    pub fit: f64,
    pub reg_h1: f64,
    pub reg_w: Vec<f64>,
    pub layers: Vec<LayerMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub prng: String,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub final_loss: f64,
    pub optimal_loss: f64,
    pub optimum_gap: f64,
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub_seed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_loss: f64,
    /// `final_loss − optimal loss`.
    pub optimum_gap: f64,
    pub history: Vec<MetricsRecord>,
    /// Total loss at every step `0 ..= steps`.
    pub losses: Vec<f64>,
    pub manifest: RunManifest,
    pub params: DufmParams,
}

impl RunResult {
    pub fn relative_gap(&self) -> f64 {
        self.optimum_gap / self.manifest.optimal_loss
    }

    /// First step whose relative gap to the optimum is below `frac`.
    pub fn steps_to_gap(&self, frac: f64) -> Option<usize> {
        let opt = self.manifest.optimal_loss;
        self.losses.iter().position(|&l| (l - opt) / opt < frac)
    }
}

fn is_log_step(step: usize, config: &TrainConfig) -> bool {
    step % config.log_every == 0 || step == config.steps
}

/// Gaussian initialization followed by `params ← params − lr·∇`.
///
/// Records are logged at step 0, every `log_every` steps and at the final
/// step. Aborts with [`Error::Diverged`] on a non-finite loss or once the
/// loss exceeds [`DIVERGENCE_FACTOR`] times its initial value.
pub fn train(config: &TrainConfig) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let report = theoretical_optimum(&config.dims, &config.reg)?;
    let mut rng = Rng::new(config.seed);
    let mut params = DufmParams::random(&config.dims, &mut rng, config.init);
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(config.steps + 1);
    let mut initial = f64::NAN;
    let mut final_loss = f64::NAN;

    for step in 0..=config.steps {
        let (loss, grad, trace) = loss_and_gradient(&params, &config.dims, &config.reg)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step, reason: format!("loss is {}", loss.total) });
        }
        if step == 0 {
            initial = loss.total;
        } else if loss.total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged {
                step,
                reason: format!("loss {} exceeds {DIVERGENCE_FACTOR}x the initial {initial}", loss.total),
            });
        }
        losses.push(loss.total);
        if is_log_step(step, config) {
            let layers = layer_metrics(&params, &config.dims, &trace)?;
            debug!("step {step}: loss {:.10e}", loss.total);
            history.push(MetricsRecord {
                step,
                total: loss.total,
                fit: loss.fit,
                reg_h1: loss.reg_h1,
                reg_w: loss.reg_w,
                layers,
            });
        }
        if step == config.steps {
            final_loss = loss.total;
            break;
        }
        params.axpy(-config.lr, &grad)?;
    }

    let optimum_gap = final_loss - report.optimal_loss;
    info!("seed {}: final loss {final_loss:.10e}, gap {optimum_gap:.3e}", config.seed);
    let manifest = RunManifest {
        config: config.clone(),
        seed: config.seed,
        prng: PRNG_NAME.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        final_loss,
        optimal_loss: report.optimal_loss,
        optimum_gap,
        regime: report.regime,
        sub_seed: None,
    };
    Ok(RunResult { final_loss, optimum_gap, history, losses, manifest, params })
}

/// `step,total,fit,reg_h1,reg_w_1..L,dnc1_pre_1..L,dnc1_post_1..L,dnc2_pre_1..L,dnc2_post_1..L,dnc3_1..L`
pub fn csv_header(layers: usize) -> String {
    let mut cols = vec!["step".to_string(), "total".into(), "fit".into(), "reg_h1".into()];
    for prefix in ["reg_w", "dnc1_pre", "dnc1_post", "dnc2_pre", "dnc2_post", "dnc3"] {
        cols.extend((1..=layers).map(|l| format!("{prefix}_{l}")));
    }
    cols.join(",")
}

pub fn csv_row(record: &MetricsRecord) -> String {
    let mut cells = vec![record.step.to_string(), format_f64(record.total), format_f64(record.fit), format_f64(record.reg_h1)];
    cells.extend(record.reg_w.iter().map(|v| format_f64(*v)));
    cells.extend(record.layers.iter().map(|m| m.dnc1_pre.to_string()));
    cells.extend(record.layers.iter().map(|m| m.dnc1_post.to_string()));
    cells.extend(record.layers.iter().map(|m| m.dnc2_pre.to_string()));
    cells.extend(record.layers.iter().map(|m| m.dnc2_post.to_string()));
    cells.extend(record.layers.iter().map(|m| format_f64(m.dnc3)));
    cells.join(",")
}

/// Writes `manifest.json`, `metrics.csv` and, when requested, `params.json`.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&result.manifest)? + "\n")?;
    let mut csv = fs::File::create(dir.join("metrics.csv"))?;
    writeln!(csv, "{}", csv_header(result.manifest.config.dims.layers()))?;
    for record in &result.history {
        writeln!(csv, "{}", csv_row(record))?;
    }
    if result.manifest.config.save_params {
        let file = ParamsFile {
            dims: result.manifest.config.dims.clone(),
            seed: Some(result.manifest.seed),
            matrices: result.params.clone(),
        };
        fs::write(dir.join("params.json"), serde_json::to_string(&file)? + "\n")?;
    }
    Ok(())
}

pub fn run_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("run-{index}"))
}

/// Values to sweep; unspecified axes keep the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Layer count; widths and weight decays of the base are broadcast.
    #[serde(rename = "L", alias = "layers", default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    /// Uniform width for every layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<Vec<usize>>,
    /// Sets `λ_{H₁}` and every `λ_{W_l}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub base: TrainConfig,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AxisValue {
    Layers(usize),
    Width(usize),
    WeightDecay(f64),
    Lr(f64),
    Seed(u64),
}

impl AxisValue {
    fn name(self) -> &'static str {
        match self {
            AxisValue::Layers(_) => "L",
            AxisValue::Width(_) => "width",
            AxisValue::WeightDecay(_) => "weight_decay",
            AxisValue::Lr(_) => "lr",
            AxisValue::Seed(_) => "seed",
        }
    }

    fn render(self) -> String {
        match self {
            AxisValue::Layers(v) | AxisValue::Width(v) => v.to_string(),
            AxisValue::WeightDecay(v) | AxisValue::Lr(v) => v.to_string(),
            AxisValue::Seed(v) => v.to_string(),
        }
    }

    fn apply(self, config: &mut TrainConfig) {
        match self {
            AxisValue::Layers(l) => {
                let width = config.dims.widths[0];
                config.dims.widths = vec![width; l];
                config.reg.lambda_w = vec![config.reg.lambda_w[0]; l];
            }
            AxisValue::Width(w) => config.dims.widths.iter_mut().for_each(|d| *d = w),
            AxisValue::WeightDecay(v) => {
                config.reg.lambda_h1 = v;
                config.reg.lambda_w.iter_mut().for_each(|l| *l = v);
            }
            AxisValue::Lr(v) => config.lr = v,
            AxisValue::Seed(v) => config.seed = v,
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub index: usize,
    /// `(axis name, rendered value)` in sweep order.
    pub axes: Vec<(String, String)>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub plan: PlannedRun,
    pub result: RunResult,
}

/// Cartesian product over axes in the order `L, width, weight_decay, lr,
/// seed` (last varies fastest). Run `i` uses seed `seed XOR mix64(i)`, so a
/// single-point sweep reproduces [`train`] exactly.
pub fn plan_ablation(config: &AblationConfig) -> Result<Vec<PlannedRun>> {
    let s = &config.sweep;
    let mut axes: Vec<Vec<AxisValue>> = Vec::new();
    let mut push = |name: &str, values: Option<Vec<AxisValue>>| -> Result<()> {
        if let Some(v) = values {
            if v.is_empty() {
                return Err(invalid(format!("sweep axis '{name}' has no values")));
            }
            axes.push(v);
        }
        Ok(())
    };
    push("L", s.layers.as_ref().map(|v| v.iter().map(|&x| AxisValue::Layers(x)).collect()))?;
    push("width", s.width.as_ref().map(|v| v.iter().map(|&x| AxisValue::Width(x)).collect()))?;
    push("weight_decay", s.weight_decay.as_ref().map(|v| v.iter().map(|&x| AxisValue::WeightDecay(x)).collect()))?;
    push("lr", s.lr.as_ref().map(|v| v.iter().map(|&x| AxisValue::Lr(x)).collect()))?;
    push("seed", s.seed.as_ref().map(|v| v.iter().map(|&x| AxisValue::Seed(x)).collect()))?;
    if axes.is_empty() {
        return Err(invalid("sweep block is empty"));
    }

    let total: usize = axes.iter().map(Vec::len).product();
    let mut runs = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut picked = vec![AxisValue::Lr(0.0); axes.len()];
        for (k, axis) in axes.iter().enumerate().rev() {
            picked[k] = axis[rem % axis.len()];
            rem /= axis.len();
        }
        let mut run_config = config.base.clone();
        for v in &picked {
            v.apply(&mut run_config);
        }
        run_config.seed ^= mix64(index as u64);
        run_config.validate()?;
        runs.push(PlannedRun {
            index,
            axes: picked.iter().map(|v| (v.name().to_string(), v.render())).collect(),
            config: run_config,
        });
    }
    Ok(runs)
}

/// Runs every planned configuration, `jobs` at a time. Results come back in
/// plan order regardless of `jobs`.
pub fn ablate(config: &AblationConfig, jobs: usize) -> Result<Vec<AblationRun>> {
    let plan = plan_ablation(config)?;
    let jobs = jobs.max(1).min(plan.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..plan.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plan.len() {
                    break;
                }
                info!("ablation run {i}/{}", plan.len());
                let outcome = train(&plan[i].config).map(|mut r| {
                    r.manifest.sub_seed = Some(format!("run seed = seed XOR mix64({i}), mix64 = SplitMix64 finalizer"));
                    r
                });
                slots.lock().expect("no panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    let slots = slots.into_inner().expect("threads joined");
    plan.into_iter()
        .zip(slots)
        .map(|(plan, slot)| slot.expect("every run executed").map(|result| AblationRun { plan, result }))
        .collect()
}

/// Runs the sweep and writes one run directory per point plus `index.csv`.
pub fn ablate_to_dir(config: &AblationConfig, out: &Path, jobs: usize) -> Result<Vec<AblationRun>> {
    let runs = ablate(config, jobs)?;
    fs::create_dir_all(out)?;
    for run in &runs {
        write_run(&run_dir(out, run.plan.index), &run.result)?;
    }
    let mut index = fs::File::create(out.join("index.csv"))?;
    if let Some(first) = runs.first() {
        let axis_names: Vec<&str> = first.plan.axes.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(index, "run,{},run_seed,final_loss,optimum_gap", axis_names.join(","))?;
    }
    for run in &runs {
        let values: Vec<&str> = run.plan.axes.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(
            index,
            "{},{},{},{},{}",
            run.plan.index,
            values.join(","),
            run.plan.config.seed,
            format_f64(run.result.final_loss),
            format_f64(run.result.optimum_gap)
        )?;
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            dims: DufmDims::uniform(3, 6, 3).unwrap(),
            reg: RegConfig::uniform(3, 5e-3).unwrap(),
            lr: 0.1,
            steps: 25,
            log_every: 10,
            seed: 11,
            save_params: false,
            init: InitScale::default(),
        }
    }

    #[test]
    fn history_includes_final_step() {
        let r = train(&small_config()).unwrap();
        let steps: Vec<usize> = r.history.iter().map(|h| h.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert_eq!(r.history.last().unwrap().total, r.final_loss);
        assert_eq!(r.losses.len(), 26);
        assert_eq!(r.losses[10], r.history[1].total);
    }

    #[test]
    fn zero_lr_keeps_initial_loss() {
        let mut c = small_config();
        c.lr = 0.0;
        let r = train(&c).unwrap();
        assert_eq!(r.history[0].total, r.final_loss);
    }

    #[test]
    fn validation() {
        let mut c = small_config();
        c.lr = -1.0;
        assert!(train(&c).is_err());
        let mut c = small_config();
        c.log_every = 26;
        assert!(c.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = small_config();
        c.lr = 1e3;
        assert!(matches!(train(&c), Err(Error::Diverged { .. })));
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            csv_header(2),
            "step,total,fit,reg_h1,reg_w_1,reg_w_2,dnc1_pre_1,dnc1_pre_2,dnc1_post_1,dnc1_post_2,\
             dnc2_pre_1,dnc2_pre_2,dnc2_post_1,dnc2_post_2,dnc3_1,dnc3_2"
        );
        let r = train(&small_config()).unwrap();
        let row = csv_row(&r.history[0]);
        assert_eq!(row.split(',').count(), csv_header(3).split(',').count());
    }

    #[test]
    fn sweep_plan() {
        let base = small_config();
        let single = AblationConfig { base: base.clone(), sweep: SweepSpec { lr: Some(vec![0.1]), ..Default::default() } };
        let plan = plan_ablation(&single).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].config, base);

        let grid = AblationConfig {
            base: base.clone(),
            sweep: SweepSpec { width: Some(vec![2, 4]), weight_decay: Some(vec![1e-3, 2e-3, 3e-3]), ..Default::default() },
        };
        let plan = plan_ablation(&grid).unwrap();
        assert_eq!(plan.len(), 6);
        assert_eq!(plan[5].config.dims.widths, vec![4; 3]);
        assert_eq!(plan[5].config.reg.lambda_h1, 3e-3);
        assert_ne!(plan[1].config.seed, plan[2].config.seed);

        let empty = AblationConfig { base: base.clone(), sweep: SweepSpec::default() };
        assert!(plan_ablation(&empty).is_err());
        let empty_axis = AblationConfig { base, sweep: SweepSpec { lr: Some(vec![]), ..Default::default() } };
        assert!(plan_ablation(&empty_axis).is_err());
    }
}
