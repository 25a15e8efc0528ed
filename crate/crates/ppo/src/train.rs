//! The outer training loop: fresh instances every iteration, greedy
//! evaluation on a fixed validation set, checkpoints and a metrics log.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use jobshop_core::rules::pdr_dispatch;
use jobshop_core::seed::{self, stream};
use jobshop_core::{sample_scenario, terminal_cost, Instance, Rule, Scenario, State};
use jobshop_gnn::{ActMode, GnnError, Params, Policy};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::optim::Adam;
use crate::rollout::{collect, EpisodeSpec, Trajectory};
use crate::update::{build_samples, update, UpdateStats};
use crate::PpoError;

/// Fixed instances with paired scenarios; every method is scored on the same
/// draws.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub instances: Vec<Arc<Instance>>,
    pub scenarios: Vec<Vec<Scenario>>,
    /// Mean makespan of each dispatching rule on the set.
    pub rules: Vec<(Rule, f64)>,
}

impl ValidationSet {
    pub fn new(config: &TrainConfig) -> Result<Self, PpoError> {
        let v = &config.validation;
        let instances = (0..v.instances)
            .map(|k| {
                let s = seed::derive(config.seed, &[stream::VALID, k as u64]);
                config.problem.family(k).generate(s).map(Arc::new)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scenarios = instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                (0..v.scenarios)
                    .map(|j| sample_scenario(inst, seed::derive(config.seed, &[stream::VALID, k as u64, j as u64])))
                    .collect()
            })
            .collect();
        let mut set = Self {
            instances,
            scenarios,
            rules: Vec::new(),
        };
        set.rules = Rule::DETERMINISTIC
            .iter()
            .map(|&rule| {
                let states: Vec<State> = set.instances.iter().map(|i| pdr_dispatch(i.clone(), rule)).collect();
                (rule, set.mean_cost(&states))
            })
            .collect();
        Ok(set)
    }

    /// Mean makespan of terminal states (one per instance) over all paired
    /// scenarios.
    pub fn mean_cost(&self, states: &[State]) -> f64 {
        let mut total = 0.0;
        let mut cells = 0usize;
        for (state, scenarios) in states.iter().zip(&self.scenarios) {
            for sc in scenarios {
                total += terminal_cost(state, sc).expect("terminal state");
                cells += 1;
            }
        }
        total / cells as f64
    }

    pub fn evaluate(&self, policy: &Policy<f32>, chunk: usize) -> Result<f64, GnnError> {
        Ok(self.mean_cost(&policy.schedule_argmax(&self.instances, chunk)?))
    }

    pub fn rule(&self, rule: Rule) -> Option<f64> {
        self.rules.iter().find(|(r, _)| *r == rule).map(|&(_, v)| v)
    }
}

/// One row of the metrics log. Row 0 is the untrained policy.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_cost: f64,
    pub valid_makespan: f64,
    pub best_valid: f64,
    pub stats: UpdateStats,
}

pub const METRICS_HEADER: &str = "iteration,mean_return,mean_cost,valid_makespan,best_valid,policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm,epochs,updates,early_stop,rolled_back";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        let opt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            opt(self.mean_return),
            opt(self.mean_cost),
            self.valid_makespan,
            self.best_valid,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.approx_kl,
            s.clip_fraction,
            s.grad_norm,
            s.epochs,
            s.updates,
            u8::from(s.early_stop),
            u8::from(s.rolled_back)
        )
    }
}

/// Wall-clock seconds spent in each phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub collect: f64,
    pub update: f64,
    pub validate: f64,
    pub total: f64,
}

pub const TIMING_HEADER: &str = "iteration,collect_s,update_s,validate_s,total_s";

/// Persisted between runs next to the checkpoints. Floats are kept as text
/// so that they round-trip exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunState {
    iteration: usize,
    best_valid: String,
    best_iteration: usize,
    untrained_valid: String,
    adam_step: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub policy: Policy<f32>,
    pub adam: Adam<f32>,
    pub validation: ValidationSet,
    pub records: Vec<IterationRecord>,
    iteration: usize,
    best_valid: f64,
    best_iteration: usize,
    untrained_valid: f64,
    out: Option<PathBuf>,
}

impl Trainer {
    /// Initializes the network, scores it on the validation set (row 0) and,
    /// with `out`, creates the run directory.
    pub fn new(config: TrainConfig, out: Option<&Path>) -> Result<Self, PpoError> {
        config.validate()?;
        let policy = Policy::init(&config.network, seed::derive(config.seed, &[stream::INIT]))?;
        let p = &config.ppo;
        let adam = Adam::new(&policy.params, p.adam_beta1, p.adam_beta2, p.adam_eps);
        let validation = ValidationSet::new(&config)?;
        let start = Instant::now();
        let valid = validation.evaluate(&policy, config.sub_batch)?;
        let mut trainer = Self {
            config,
            policy,
            adam,
            validation,
            records: Vec::new(),
            iteration: 0,
            best_valid: valid,
            best_iteration: 0,
            untrained_valid: valid,
            out: out.map(Path::to_path_buf),
        };
        let record = IterationRecord {
            iteration: 0,
            mean_return: f64::NAN,
            mean_cost: f64::NAN,
            valid_makespan: valid,
            best_valid: valid,
            stats: UpdateStats::default(),
        };
        if let Some(dir) = &trainer.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), trainer.config.to_json())?;
            fs::write(dir.join("metrics.csv"), format!("{METRICS_HEADER}\n"))?;
            fs::write(dir.join("timing.csv"), format!("{TIMING_HEADER}\n"))?;
            fs::write(dir.join("validation.json"), trainer.validation_summary())?;
            trainer.policy.params.save(dir.join("best.ckpt"))?;
        }
        let timing = Timing {
            validate: start.elapsed().as_secs_f64(),
            total: start.elapsed().as_secs_f64(),
            ..Default::default()
        };
        trainer.persist(&record, &timing)?;
        trainer.records.push(record);
        Ok(trainer)
    }

    /// Continues a run from the files written by a previous one.
    pub fn resume(dir: &Path) -> Result<Self, PpoError> {
        let config = TrainConfig::from_json(&fs::read_to_string(dir.join("config.json"))?)?;
        let state: RunState = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)
            .map_err(|e| PpoError::Resume(format!("state.json: {e}")))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| PpoError::Resume(format!("state.json: {e}")))
        };
        let params = Params::<f32>::load(dir.join("last.ckpt"))?;
        if params.config() != &config.network {
            return Err(PpoError::Resume("last.ckpt does not match config.json".into()));
        }
        let p = &config.ppo;
        let mut adam = Adam::new(&params, p.adam_beta1, p.adam_beta2, p.adam_eps);
        adam.step = state.adam_step;
        adam.m = Params::load(dir.join("adam_m.ckpt"))?;
        adam.v = Params::load(dir.join("adam_v.ckpt"))?;
        let validation = ValidationSet::new(&config)?;
        Ok(Self {
            config,
            policy: Policy::new(params),
            adam,
            validation,
            records: Vec::new(),
            iteration: state.iteration,
            best_valid: parse(&state.best_valid)?,
            best_iteration: state.best_iteration,
            untrained_valid: parse(&state.untrained_valid)?,
            out: Some(dir.to_path_buf()),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_iteration, self.best_valid)
    }

    pub fn untrained_valid(&self) -> f64 {
        self.untrained_valid
    }

    /// Instances, action seeds and scenario seeds of iteration `it`.
    pub fn episodes(&self, it: usize) -> Result<Vec<EpisodeSpec>, PpoError> {
        let base = self.config.seed;
        (0..self.config.ppo.episodes_per_iteration)
            .map(|k| {
                let path = [it as u64, k as u64];
                let inst = self
                    .config
                    .problem
                    .family(k)
                    .generate(seed::derive(base, &[stream::TRAIN, path[0], path[1]]))?;
                Ok(EpisodeSpec {
                    instance: Arc::new(inst),
                    policy_seed: seed::derive(base, &[stream::POLICY, path[0], path[1]]),
                    scenario_seed: seed::derive(base, &[stream::SCENARIO, path[0], path[1]]),
                })
            })
            .collect()
    }

    /// Collect, estimate, rewire, update, validate.
    pub fn step(&mut self) -> Result<(IterationRecord, Timing), PpoError> {
        let it = self.iteration + 1;
        let start = Instant::now();
        let cfg = &self.config;
        let episodes = self.episodes(it)?;
        let trajs: Vec<Trajectory> = collect(
            &self.policy,
            &episodes,
            ActMode::Sample,
            cfg.ppo.reward_scale,
            cfg.sub_batch,
        )?;
        let t_collect = start.elapsed().as_secs_f64();
        let n = trajs.len() as f64;
        let mean_return = trajs.iter().map(|t| t.rewards().iter().sum::<f64>()).sum::<f64>() / n;
        let mean_cost = trajs.iter().map(|t| t.cost).sum::<f64>() / n;

        let samples = build_samples(&trajs, &cfg.ppo, cfg.network.rewire_options());
        let shuffle = seed::derive(cfg.seed, &[stream::SHUFFLE, it as u64]);
        let stats = update(
            &mut self.policy.params,
            &mut self.adam,
            &samples,
            &cfg.ppo,
            cfg.sub_batch,
            shuffle,
        )?;
        let t_update = start.elapsed().as_secs_f64();

        let valid = self.validation.evaluate(&self.policy, cfg.sub_batch)?;
        self.iteration = it;
        if valid < self.best_valid {
            self.best_valid = valid;
            self.best_iteration = it;
            if let Some(dir) = &self.out {
                self.policy.params.save(dir.join("best.ckpt"))?;
            }
        }
        let total = start.elapsed().as_secs_f64();
        let record = IterationRecord {
            iteration: it,
            mean_return,
            mean_cost,
            valid_makespan: valid,
            best_valid: self.best_valid,
            stats,
        };
        let timing = Timing {
            collect: t_collect,
            update: t_update - t_collect,
            validate: total - t_update,
            total,
        };
        self.persist(&record, &timing)?;
        self.records.push(record.clone());
        Ok((record, timing))
    }

    /// Steps until `iterations` have been completed in total.
    pub fn run(
        &mut self,
        iterations: usize,
        mut on_iteration: impl FnMut(&IterationRecord, &Timing),
    ) -> Result<(), PpoError> {
        while self.iteration < iterations {
            let (record, timing) = self.step()?;
            on_iteration(&record, &timing);
        }
        Ok(())
    }

    fn persist(&self, record: &IterationRecord, timing: &Timing) -> Result<(), PpoError> {
        let Some(dir) = &self.out else { return Ok(()) };
        append(&dir.join("metrics.csv"), &record.csv_row())?;
        append(
            &dir.join("timing.csv"),
            &format!(
                "{},{:.3},{:.3},{:.3},{:.3}",
                record.iteration, timing.collect, timing.update, timing.validate, timing.total
            ),
        )?;
        self.policy.params.save(dir.join("last.ckpt"))?;
        self.adam.m.save(dir.join("adam_m.ckpt"))?;
        self.adam.v.save(dir.join("adam_v.ckpt"))?;
        let state = RunState {
            iteration: self.iteration,
            best_valid: self.best_valid.to_string(),
            best_iteration: self.best_iteration,
            untrained_valid: self.untrained_valid.to_string(),
            adam_step: self.adam.step,
        };
        fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state).unwrap())?;
        Ok(())
    }

    fn validation_summary(&self) -> String {
        let mut rules = serde_json::Map::new();
        for (rule, v) in &self.validation.rules {
            rules.insert(rule.to_string(), serde_json::json!(v));
        }
        let summary = serde_json::json!({
            "instances": self.validation.instances.len(),
            "scenarios": self.config.validation.scenarios,
            "untrained": self.untrained_valid,
            "rules": rules,
        });
        serde_json::to_string_pretty(&summary).unwrap()
    }
}

fn append(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = fs::OpenOptions::new().append(true).create(true).open(path)?;
    writeln!(f, "{line}")
}

/// Runs a fresh training job to `config.iterations`.
pub fn train(config: TrainConfig, out: Option<&Path>) -> Result<Trainer, PpoError> {
    let iterations = config.iterations;
    let mut trainer = Trainer::new(config, out)?;
    trainer.run(iterations, |_, _| {})?;
    Ok(trainer)
}

/// Renders the metrics log in memory (header plus one row per record).
pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}
