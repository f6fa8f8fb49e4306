use anyhow::Context;
use rayon::prelude::*;

use flexenv_core::envelope::{compute_envelope, compute_fea, envelope_mfph, fmt_num, FlexibilityEnvelope, Formulation};
use flexenv_core::instance::{weather_features, Instance, InstanceConfig};
use flexenv_core::market::{load_prices, synth_prices, utilization_rate, PriceSeries};
use flexenv_core::model::{NoiseSpec, StateSpaceModel};
use flexenv_core::policies::{
    average_policies, optimal_policies, policy_distance, select_policy, train_average_library,
    train_cluster_policies, AffinePolicy, Direction, PolicyLibrary,
};
use flexenv_core::provision::{
    crossover_multiplier, normalization_reference, open_loop_violation_frequency, prepare_run,
    price_sensitivity_sweep, run_prepared, sub_seed, PipelineOutcome, PreparedRun, RevenueBreakdown, ScenarioConfig,
};

use crate::config::ExperimentConfig;
use crate::exit::{self, PartialFailure};
use crate::output::{long_table, numeric_table, OutputDir, Record};

/// Day seeds of policy training and held-out days start here, far from run seeds.
const TRAINING_DAY_OFFSET: u64 = 1 << 32;
const MONTECARLO_STREAM: u64 = 3;

/// Resolved configuration with the loaded inputs shared by every command.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub out: OutputDir,
    model: Option<(StateSpaceModel, NoiseSpec)>,
    prices: Option<PriceSeries>,
}

/// Failures of a batch, remembered while the remaining runs continue.
#[derive(Default)]
struct Failures {
    count: usize,
    code: Option<u8>,
}

impl Failures {
    fn record(&mut self, what: &str, err: &anyhow::Error) {
        log::error!("{what} failed: {err:#}");
        self.count += 1;
        self.code.get_or_insert(exit::code(err));
    }

    fn finish(self, total: usize) -> anyhow::Result<()> {
        match self.code {
            None => Ok(()),
            Some(code) => Err(PartialFailure {
                failed: self.count,
                total,
                code,
            }
            .into()),
        }
    }
}

fn file_label(s: &str) -> String {
    s.replace('/', "_")
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> anyhow::Result<Self> {
        cfg.validate()?;
        let model = match &cfg.model.file {
            Some(path) => Some(StateSpaceModel::load(path).with_context(|| format!("loading {}", path.display()))?),
            None => None,
        };
        let prices = match &cfg.prices {
            Some(path) => Some(load_prices(path).with_context(|| format!("loading {}", path.display()))?),
            None => None,
        };
        let out = OutputDir::create(&cfg.output, cfg.hash()?)?;
        Ok(Self { cfg, out, model, prices })
    }

    fn instance_with(&self, day_seed: u64, inst_cfg: &InstanceConfig) -> anyhow::Result<Instance> {
        let inst = match &self.model {
            Some((model, noise)) => Instance::from_model(model.clone(), noise.clone(), day_seed, inst_cfg)?,
            None => Instance::synthetic(self.cfg.model.building_seed, day_seed, inst_cfg)?,
        };
        Ok(inst)
    }

    fn instance(&self, day_seed: u64) -> anyhow::Result<Instance> {
        self.instance_with(day_seed, &self.cfg.instance)
    }

    fn prices(&self, seed: u64) -> PriceSeries {
        match &self.prices {
            Some(p) => p.clone(),
            None => synth_prices(seed, self.cfg.instance.horizon),
        }
    }

    fn training_instances(&self, first: usize, count: usize) -> anyhow::Result<Vec<Instance>> {
        (first..first + count)
            .map(|i| self.instance(TRAINING_DAY_OFFSET + self.cfg.seed + i as u64))
            .collect()
    }

    fn train_library(&self) -> anyhow::Result<PolicyLibrary> {
        let p = &self.cfg.policies;
        let days = self.training_instances(0, p.training_days)?;
        let lib = match p.clusters {
            Some(k) => train_cluster_policies(&days, k, self.cfg.seed, p.hour)?,
            None => train_average_library(&days, p.hour, self.cfg.seed)?,
        };
        Ok(lib)
    }

    /// Policy library for UAF-fixed, loaded or trained, if any formulation needs it.
    fn fixed_library(&self) -> anyhow::Result<Option<PolicyLibrary>> {
        if !self.cfg.formulations.contains(&Formulation::UafFixed) {
            return Ok(None);
        }
        let lib = match &self.cfg.policies.library {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                PolicyLibrary::from_json(&text)?
            }
            None => self.train_library()?,
        };
        Ok(Some(lib))
    }

    fn policies_for(
        &self,
        lib: Option<&PolicyLibrary>,
        inst: &Instance,
    ) -> anyhow::Result<Option<(AffinePolicy, AffinePolicy)>> {
        let Some(lib) = lib else { return Ok(None) };
        let features = weather_features(&inst.weather);
        let hour = self.cfg.policies.hour;
        let up = select_policy(lib, hour, Direction::Up, &features)?.clone();
        let down = select_policy(lib, hour, Direction::Down, &features)?.clone();
        Ok(Some((up, down)))
    }

    fn envelope(
        &self,
        inst: &Instance,
        formulation: Formulation,
        lib: Option<&PolicyLibrary>,
    ) -> anyhow::Result<FlexibilityEnvelope> {
        let fixed = self.policies_for(lib, inst)?;
        let fixed_refs = fixed.as_ref().map(|(u, d)| (u, d));
        Ok(compute_envelope(&inst.context(), formulation, fixed_refs)?)
    }

    fn prepare(
        &self,
        seed: u64,
        formulation: Formulation,
        lib: Option<&PolicyLibrary>,
    ) -> anyhow::Result<(Instance, PriceSeries, PreparedRun)> {
        let inst = self.instance(seed)?;
        let prices = self.prices(seed);
        let fixed = self.policies_for(lib, &inst)?;
        let fixed_refs = fixed.as_ref().map(|(u, d)| (u, d));
        let prepared = prepare_run(&inst, &prices, formulation, fixed_refs, &self.cfg.activation, seed)?;
        Ok((inst, prices, prepared))
    }

    /// Prepared runs for every seed and formulation, in that order; failures are recorded.
    fn prepare_all(
        &self,
        lib: Option<&PolicyLibrary>,
        failures: &mut Failures,
    ) -> Vec<(u64, Instance, PriceSeries, PreparedRun)> {
        let jobs: Vec<(u64, Formulation)> = self
            .cfg
            .run_seeds()
            .into_iter()
            .flat_map(|s| self.cfg.formulations.iter().map(move |f| (s, *f)))
            .collect();
        let results: Vec<_> = jobs.par_iter().map(|&(s, f)| self.prepare(s, f, lib)).collect();
        let mut ok = Vec::new();
        for ((seed, f), r) in jobs.into_iter().zip(results) {
            match r {
                Ok((inst, prices, prepared)) => ok.push((seed, inst, prices, prepared)),
                Err(e) => failures.record(&format!("seed {seed} {f}"), &e),
            }
        }
        ok
    }

    pub fn cmd_envelope(&self) -> anyhow::Result<()> {
        let cfg = &self.cfg;
        let lib = self.fixed_library()?;
        let mut jobs = Vec::new();
        for seed in cfg.run_seeds() {
            for &width in &cfg.comfort_widths {
                for &eps in &cfg.eps_c {
                    for &f in &cfg.formulations {
                        jobs.push((seed, width, eps, f));
                    }
                }
            }
        }
        let results: Vec<anyhow::Result<(FlexibilityEnvelope, Instance)>> = jobs
            .par_iter()
            .map(|&(seed, width, eps, f)| {
                let inst_cfg = InstanceConfig {
                    comfort_width: width,
                    eps_c: eps,
                    ..cfg.instance.clone()
                };
                let inst = self.instance_with(seed, &inst_cfg)?;
                let env = self.envelope(&inst, f, lib.as_ref())?;
                Ok((env, inst))
            })
            .collect();

        let mut failures = Failures::default();
        let mut summary = Vec::new();
        let mut done: Vec<((f64, f64, Formulation), FlexibilityEnvelope)> = Vec::new();
        for (&(seed, width, eps, f), r) in jobs.iter().zip(results) {
            let (env, inst) = match r {
                Ok(v) => v,
                Err(e) => {
                    failures.record(&format!("envelope seed {seed} width {width} eps_c {eps} {f}"), &e);
                    continue;
                }
            };
            let case = format!("width={width};eps_c={eps}");
            let n = env.horizon();
            let mfph = envelope_mfph(&env, &inst.comfort).unwrap_or(n);
            for (metric, value) in [
                ("fea", compute_fea(&env)),
                ("mfph", mfph as f64),
                ("e_up_final", env.e_up()[n]),
                ("e_down_final", env.e_down()[n]),
                ("slack_up", env.up.total_slack()),
                ("slack_down", env.down.total_slack()),
            ] {
                summary.push(Record::new(seed, f.as_str(), &case, metric, value));
            }
            let name = format!("envelopes/seed{seed}_w{width}_eps{eps}_{f}.csv");
            self.out.write(&name, seed, &env.to_csv()?)?;
            done.push(((width, eps, f), env));
        }
        self.out.write("envelope_summary.csv", cfg.seed, &long_table(&summary)?)?;

        for &width in &cfg.comfort_widths {
            for &eps in &cfg.eps_c {
                for &f in &cfg.formulations {
                    let members: Vec<&FlexibilityEnvelope> = done
                        .iter()
                        .filter(|(key, _)| *key == (width, eps, f))
                        .map(|(_, e)| e)
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let steps = members[0].e_up().len();
                    let count = members.len() as f64;
                    let rows: Vec<Vec<f64>> = (0..steps)
                        .map(|k| {
                            let up = members.iter().map(|e| e.e_up()[k]).sum::<f64>() / count;
                            let down = members.iter().map(|e| e.e_down()[k]).sum::<f64>() / count;
                            vec![k as f64, up, down]
                        })
                        .collect();
                    let name = format!("envelope_mean_w{width}_eps{eps}_{f}.csv");
                    self.out.write(&name, cfg.seed, &numeric_table(&["k", "E_up", "E_down"], &rows)?)?;
                }
            }
        }
        failures.finish(jobs.len())
    }

    pub fn cmd_train_policies(&self) -> anyhow::Result<()> {
        let p = &self.cfg.policies;
        let days = self.training_instances(0, p.training_days)?;
        let held_out = self.training_instances(p.training_days, p.held_out_days)?;
        let lib = match p.clusters {
            Some(k) => train_cluster_policies(&days, k, self.cfg.seed, p.hour)?,
            None => train_average_library(&days, p.hour, self.cfg.seed)?,
        };
        self.out.write("policies.json", self.cfg.seed, &lib.to_json()?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["samples", "direction", "mean_distance", "max_distance"])?;
        for dir in Direction::BOTH {
            let train = optimal_policies(&days, dir, p.hour)?;
            let truth = optimal_policies(&held_out, dir, p.hour)?;
            for &n in &p.sample_counts {
                let avg = average_policies(&train[..n])?;
                let mut mean = 0.0;
                let mut max = 0.0f64;
                for t in &truth {
                    let (m, x) = policy_distance(&avg, t)?;
                    mean += m / truth.len() as f64;
                    max = max.max(x);
                }
                w.write_record([n.to_string(), dir.as_str().to_string(), fmt_num(mean), fmt_num(max)])?;
            }
        }
        let table = String::from_utf8(w.into_inner()?)?;
        self.out.write("policy_distances.csv", self.cfg.seed, &table)?;
        Ok(())
    }

    pub fn cmd_bid(&self) -> anyhow::Result<()> {
        let lib = self.fixed_library()?;
        let mut failures = Failures::default();
        let runs = self.prepare_all(lib.as_ref(), &mut failures);
        let mut summary = Vec::new();
        let mut priced = Vec::new();
        for (seed, inst, prices, prepared) in &runs {
            let f = prepared.formulation;
            let dt = inst.model.dt;
            let bid = &prepared.bid;
            let up: f64 = (0..bid.horizon()).map(|k| bid.total_plus(k) * dt).sum();
            let down: f64 = (0..bid.horizon()).map(|k| bid.total_minus(k) * dt).sum();
            for (metric, value) in [
                ("reserve_revenue", bid.revenue),
                ("reserved_up_kwh", up),
                ("reserved_down_kwh", down),
                ("fea", compute_fea(&prepared.envelope)),
                ("baseline_cost", prepared.baseline.cost),
            ] {
                summary.push(Record::new(*seed, f.as_str(), "day-ahead", metric, value));
            }
            self.out.write(&format!("bids/seed{seed}_{f}.csv"), *seed, &bid.to_csv()?)?;
            if !priced.contains(seed) {
                self.out.write(&format!("prices/seed{seed}.csv"), *seed, &prices.to_csv()?)?;
                priced.push(*seed);
            }
        }
        self.out.write("bid_summary.csv", self.cfg.seed, &long_table(&summary)?)?;
        failures.finish(self.cfg.seeds * self.cfg.formulations.len())
    }

    fn outcome_records(
        seed: u64,
        prepared: &PreparedRun,
        scenario: &ScenarioConfig,
        outcome: &PipelineOutcome,
        reference: Option<f64>,
    ) -> anyhow::Result<Vec<Record>> {
        let r = &outcome.revenue;
        let d = &outcome.discomfort;
        let f = prepared.formulation.as_str();
        let label = scenario.label();
        let mut metrics = vec![
            ("reserve_revenue", r.reserve_revenue),
            ("energy_revenue", r.energy_revenue),
            ("adaptation_cost", r.adaptation_cost),
            ("penalty_cost", r.penalty_cost),
            ("net", r.net),
            ("adapted_energy", r.adapted_energy),
            ("undelivered_energy", r.undelivered_energy),
            ("discomfort_avg", d.average),
            ("discomfort_max", d.maximum),
            ("violation_hours", d.violation_hours),
            ("utilization", utilization_rate(&prepared.signal, &prepared.bid)?),
            ("fea", compute_fea(&prepared.envelope)),
            ("controller_failures", outcome.trace.controller_failures() as f64),
        ];
        if let Some(reference) = reference {
            metrics.push(("net_pu", r.per_unit(reference).net));
        }
        Ok(metrics
            .into_iter()
            .map(|(m, v)| Record::new(seed, f, &label, m, v))
            .collect())
    }

    pub fn cmd_simulate(&self) -> anyhow::Result<()> {
        let seed = self.cfg.seed;
        let lib = self.fixed_library()?;
        let mut failures = Failures::default();
        let mut records = Vec::new();
        let mut total = 0;
        for &f in &self.cfg.formulations {
            let (inst, prices, prepared) = match self.prepare(seed, f, lib.as_ref()) {
                Ok(v) => v,
                Err(e) => {
                    total += self.cfg.scenarios.len();
                    failures.record(&format!("seed {seed} {f}"), &e);
                    continue;
                }
            };
            let outcomes: Vec<_> = self
                .cfg
                .scenarios
                .par_iter()
                .map(|s| run_prepared(&inst, &prepared, &prices, s, seed))
                .collect();
            for (s, o) in self.cfg.scenarios.iter().zip(outcomes) {
                total += 1;
                match o {
                    Ok(o) => {
                        let name = format!("traces/seed{seed}_{f}_{}.csv", file_label(&s.label()));
                        self.out.write(&name, seed, &o.trace.to_csv()?)?;
                        records.extend(Self::outcome_records(seed, &prepared, s, &o, None)?);
                    }
                    Err(e) => failures.record(&format!("seed {seed} {f} {}", s.label()), &anyhow::Error::from(e)),
                }
            }
        }
        self.out.write("simulate_summary.csv", seed, &long_table(&records)?)?;
        failures.finish(total)
    }

    pub fn cmd_montecarlo(&self) -> anyhow::Result<()> {
        let mc = &self.cfg.montecarlo;
        let seeds = self.cfg.run_seeds();
        let results: Vec<anyhow::Result<_>> = seeds
            .par_iter()
            .map(|&seed| {
                let inst = self.instance(seed)?;
                let env = self.envelope(&inst, mc.formulation, None)?;
                let freq = open_loop_violation_frequency(
                    &inst,
                    &env.up.powers,
                    mc.samples,
                    sub_seed(seed, MONTECARLO_STREAM),
                )?;
                Ok(freq)
            })
            .collect();
        let mut failures = Failures::default();
        let mut summary = Vec::new();
        let scenario = "open-loop-upper";
        for (&seed, r) in seeds.iter().zip(results) {
            let freq = match r {
                Ok(f) => f,
                Err(e) => {
                    failures.record(&format!("montecarlo seed {seed}"), &e);
                    continue;
                }
            };
            let rows: Vec<Vec<f64>> = (0..freq.nrows())
                .flat_map(|k| (0..freq.ncols()).map(move |r| (k, r)))
                .map(|(k, r)| vec![k as f64, r as f64, freq[(k, r)]])
                .collect();
            let table = numeric_table(&["step", "room", "violation_frequency"], &rows)?;
            self.out.write(&format!("montecarlo/seed{seed}.csv"), seed, &table)?;
            let f = mc.formulation.as_str();
            summary.push(Record::new(seed, f, scenario, "max_frequency", freq.max()));
            summary.push(Record::new(seed, f, scenario, "mean_frequency", freq.mean()));
            summary.push(Record::new(seed, f, scenario, "eps_c", self.cfg.instance.eps_c));
        }
        self.out.write("montecarlo_summary.csv", self.cfg.seed, &long_table(&summary)?)?;
        failures.finish(seeds.len())
    }

    fn write_sweep(&self, runs: &[(u64, Instance, PriceSeries, PreparedRun)]) -> anyhow::Result<()> {
        let sweep = &self.cfg.sweep;
        let cases: Vec<_> = runs.iter().map(|(s, i, p, r)| (i, r, p, *s)).collect();
        let rows = price_sensitivity_sweep(&cases, &sweep.scenario, &sweep.multipliers)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["multiplier", "formulation", "net", "adaptation_cost", "adapted_energy", "runs"])?;
        for r in &rows {
            w.write_record([
                fmt_num(r.multiplier),
                r.formulation.as_str().to_string(),
                fmt_num(r.net),
                fmt_num(r.adaptation_cost),
                fmt_num(r.adapted_energy),
                r.runs.to_string(),
            ])?;
        }
        self.out.write("sweep.csv", self.cfg.seed, &String::from_utf8(w.into_inner()?)?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["reference", "challenger", "crossover_multiplier"])?;
        for &f in self.cfg.formulations.iter().filter(|f| **f != Formulation::Ui) {
            let m = crossover_multiplier(&rows, Formulation::Ui, f);
            w.write_record(["UI", f.as_str(), &m.map_or(String::new(), fmt_num)])?;
        }
        self.out
            .write("sweep_crossover.csv", self.cfg.seed, &String::from_utf8(w.into_inner()?)?)?;
        Ok(())
    }

    pub fn cmd_sweep(&self) -> anyhow::Result<()> {
        let lib = self.fixed_library()?;
        let mut failures = Failures::default();
        let runs = self.prepare_all(lib.as_ref(), &mut failures);
        self.write_sweep(&runs)?;
        failures.finish(self.cfg.seeds * self.cfg.formulations.len())
    }

    pub fn cmd_run(&self, with_sweep: bool) -> anyhow::Result<()> {
        let cfg = &self.cfg;
        let lib = self.fixed_library()?;
        let mut failures = Failures::default();
        let runs = self.prepare_all(lib.as_ref(), &mut failures);
        let jobs: Vec<(usize, usize)> = (0..runs.len())
            .flat_map(|r| (0..cfg.scenarios.len()).map(move |s| (r, s)))
            .collect();
        let outcomes: Vec<_> = jobs
            .par_iter()
            .map(|&(r, s)| {
                let (seed, inst, prices, prepared) = &runs[r];
                run_prepared(inst, prepared, prices, &cfg.scenarios[s], *seed)
            })
            .collect();

        let mut finished: Vec<(usize, usize, PipelineOutcome)> = Vec::new();
        for (&(r, s), o) in jobs.iter().zip(outcomes) {
            match o {
                Ok(o) => finished.push((r, s, o)),
                Err(e) => {
                    let (seed, _, _, p) = &runs[r];
                    let what = format!("seed {seed} {} {}", p.formulation, cfg.scenarios[s].label());
                    failures.record(&what, &anyhow::Error::from(e));
                }
            }
        }
        let summary: Vec<(Formulation, _, RevenueBreakdown)> = finished
            .iter()
            .map(|(r, s, o)| (runs[*r].3.formulation, cfg.scenarios[*s].mode, o.revenue))
            .collect();
        let reference = normalization_reference(&summary);
        let mut records = Vec::new();
        for (r, s, o) in &finished {
            let (seed, _, _, prepared) = &runs[*r];
            records.extend(Self::outcome_records(*seed, prepared, &cfg.scenarios[*s], o, reference)?);
        }
        self.out.write("results.csv", cfg.seed, &long_table(&records)?)?;
        if with_sweep {
            self.write_sweep(&runs)?;
        }
        failures.finish(cfg.seeds * cfg.formulations.len() * cfg.scenarios.len())
    }
}
