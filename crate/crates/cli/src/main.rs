//! `crnwalk` command-line front end. Every run prints one JSON report that
//! embeds the resolved configuration and the toolkit version.

mod render;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crnwalk::altnet::{alt_electrical_flow, build_alternative_neighbourhoods, check_rigidity, estimate_phi, sample_flux_contribution, RatioVector};
use crnwalk::crn::{gibbs_consumption, MassActionSystem, Perturbation, ValidatedSystem};
use crnwalk::electric::{electrical_flow, escape_time_from, flow_energy, verify_kirchhoff, FlowVector, Network, SourceSpec};
use crnwalk::masg::{build_masg, export_dictionary, masg_flow, masg_flow_energy, Masg};
use crnwalk::qwalk::{
    cost_estimate, detect, find, find_distribution, measure_edges, prepare_flow_state, CostKind, Mode, SimulationParams,
    MAX_PE_BITS,
};
use crnwalk::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "crnwalk", version, about = "Reaction networks as electrical networks, with quantum-walk simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
}

#[derive(Args, Debug, Clone)]
struct Options {
    /// Target precision for estimation and state preparation, in (0, 1).
    #[arg(long, global = true, default_value_t = 0.1)]
    epsilon: f64,
    /// Phase-estimation register size, 1 to 12.
    #[arg(long = "pe-bits", global = true, default_value_t = 8)]
    pe_bits: u32,
    #[arg(long, global = true, default_value_t = 1024)]
    shots: u64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    /// Write a Graphviz rendering of the network here.
    #[arg(long, global = true)]
    dot: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance for assumption and Kirchhoff checks.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Exact,
    Simulate,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check reversibility, particle conservation and detailed balance.
    Validate { model: PathBuf },
    /// Build the species-reaction graph and its correspondence table.
    Masg { crn: PathBuf, perturbation: Option<PathBuf> },
    /// Linearised steady state, fluxes and Gibbs consumption.
    Steady { crn: PathBuf, perturbation: PathBuf },
    /// Electrical flow, potentials, resistance and escape time.
    Flow { model: PathBuf, sources: PathBuf },
    /// Decide whether the marked set is reachable.
    Detect { model: PathBuf, sources: PathBuf },
    /// Sample a marked vertex.
    Find { model: PathBuf, sources: PathBuf },
    /// Estimate the Gibbs consumption rate and per-reaction contributions.
    Phi { crn: PathBuf, perturbation: PathBuf },
    /// Prepare the electrical flow state and measure it.
    Flowstate { model: PathBuf, sources: PathBuf },
    /// Check whether the stoichiometric ratios force a unique flow.
    Rigidity { crn: PathBuf, perturbation: PathBuf },
    /// Evaluate a cost expression.
    Cost {
        /// One of detect, find, estimate_resistance, prepare_flow_state,
        /// detect_species, find_species, estimate_alt_resistance,
        /// prepare_alt_flow_state, estimate_phi, prepare_masg_flow_state,
        /// sample_flux.
        formula: String,
        /// JSON object of parameter values.
        parameters: Option<PathBuf>,
        /// Extra parameter as NAME=VALUE; overrides the file.
        #[arg(long = "param", value_parser = parse_param)]
        param: Vec<(String, f64)>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Masg { .. } => "masg",
            Command::Steady { .. } => "steady",
            Command::Flow { .. } => "flow",
            Command::Detect { .. } => "detect",
            Command::Find { .. } => "find",
            Command::Phi { .. } => "phi",
            Command::Flowstate { .. } => "flowstate",
            Command::Rigidity { .. } => "rigidity",
            Command::Cost { .. } => "cost",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Validate { model } => vec![model],
            Command::Masg { crn, perturbation } => std::iter::once(crn.as_path()).chain(perturbation.as_deref()).collect(),
            Command::Steady { crn, perturbation } | Command::Phi { crn, perturbation } | Command::Rigidity { crn, perturbation } => {
                vec![crn, perturbation]
            }
            Command::Flow { model, sources }
            | Command::Detect { model, sources }
            | Command::Find { model, sources }
            | Command::Flowstate { model, sources } => vec![model, sources],
            Command::Cost { parameters, .. } => parameters.iter().map(PathBuf::as_path).collect(),
        }
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

/// A failed run: exit code, short kind and message.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "malformed_input", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Assumption(_) => (3, "assumption_violated"),
            Error::Disconnected(_) => (4, "disconnected"),
            Error::Infeasible(_) => (4, "infeasible"),
            Error::Singular(_) => (4, "singular"),
            Error::TooLarge(_) => (4, "too_large"),
            Error::NotRigid(_) => (1, "not_rigid"),
            _ => (2, "malformed_input"),
        };
        Self { code, kind, message: e.to_string() }
    }
}

/// Result of a successful run; `negative` marks a negative analytic answer.
struct Outcome {
    result: Value,
    negative: bool,
}

impl Outcome {
    fn positive(result: Value) -> Self {
        Self { result, negative: false }
    }
}

type RunResult = Result<Outcome, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = resolved_config(&cli);
    let outcome = check_options(&cli.options).and_then(|()| run(&cli));
    let (code, mut report) = match outcome {
        Ok(o) => {
            let code = u8::from(o.negative);
            let status = if o.negative { "negative" } else { "ok" };
            (code, json!({ "status": status, "result": o.result }))
        }
        Err(f) => {
            eprintln!("crnwalk: {}", f.message);
            let status = if f.code == 1 { "negative" } else { "error" };
            (f.code, json!({ "status": status, "error": { "kind": f.kind, "message": f.message } }))
        }
    };
    report["command"] = json!(cli.command.name());
    report["config"] = config;
    report["version"] = json!(VERSION);
    report["exit_code"] = json!(code);
    let text = render::to_string(&report);
    match &cli.options.out {
        Some(path) => {
            if let Err(e) = fs::write(path, &text) {
                eprintln!("crnwalk: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::from(code)
}

fn resolved_config(cli: &Cli) -> Value {
    let o = &cli.options;
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let mut config = json!({
        "command": cli.command.name(),
        "inputs": cli.command.inputs().iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "epsilon": o.epsilon,
        "pe_bits": o.pe_bits,
        "shots": o.shots,
        "seed": o.seed,
        "mode": match o.mode { ModeArg::Exact => "exact", ModeArg::Simulate => "simulate" },
        "tol": o.tol,
        "dot": path(&o.dot),
        "out": path(&o.out),
    });
    if let Command::Cost { formula, param, .. } = &cli.command {
        config["formula"] = json!(formula);
        config["param"] = Value::Object(param.iter().map(|(k, v)| (k.clone(), json!(v))).collect());
    }
    config
}

fn check_options(o: &Options) -> Result<(), Failure> {
    if !(o.epsilon > 0.0 && o.epsilon < 1.0) {
        return Err(Failure::input(format!("--epsilon must lie in (0, 1), got {}", o.epsilon)));
    }
    if !(1..=MAX_PE_BITS).contains(&o.pe_bits) {
        return Err(Failure::input(format!("--pe-bits must lie in 1..={MAX_PE_BITS}, got {}", o.pe_bits)));
    }
    if o.shots == 0 {
        return Err(Failure::input("--shots must be at least 1"));
    }
    if !(o.tol.is_finite() && o.tol > 0.0) {
        return Err(Failure::input(format!("--tol must be positive, got {}", o.tol)));
    }
    Ok(())
}

fn mode(o: &Options) -> Mode {
    match o.mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Simulate => Mode::Simulate(SimulationParams { bits: o.pe_bits, shots: o.shots, seed: o.seed }),
    }
}

fn run(cli: &Cli) -> RunResult {
    let o = &cli.options;
    match &cli.command {
        Command::Validate { model } => cmd_validate(model, o),
        Command::Masg { crn, perturbation } => cmd_masg(crn, perturbation.as_deref(), o),
        Command::Steady { crn, perturbation } => cmd_steady(crn, perturbation, o),
        Command::Flow { model, sources } => cmd_flow(&load_instance(model, sources, o)?, o),
        Command::Detect { model, sources } => cmd_detect(&load_instance(model, sources, o)?, o),
        Command::Find { model, sources } => cmd_find(&load_instance(model, sources, o)?, o),
        Command::Flowstate { model, sources } => cmd_flowstate(&load_instance(model, sources, o)?, o),
        Command::Phi { crn, perturbation } => cmd_phi(&load_reaction_instance(crn, perturbation, o)?, o),
        Command::Rigidity { crn, perturbation } => cmd_rigidity(&load_reaction_instance(crn, perturbation, o)?, o),
        Command::Cost { formula, parameters, param } => cmd_cost(formula, parameters.as_deref(), param),
    }
}


fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<(String, Value), Failure> {
    let text = read(path)?;
    let value = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok((text, value))
}

enum Model {
    Reaction(MassActionSystem),
    Graph(Network),
}

/// Reaction-network files carry a `species` list; anything else is read as
/// a graph.
fn load_model(path: &Path) -> Result<Model, Failure> {
    let (text, value) = read_json(path)?;
    let located = |e: Error| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    };
    if value.get("species").is_some() {
        MassActionSystem::from_json(&text).map(Model::Reaction).map_err(located)
    } else {
        Network::from_json(&text).map(Model::Graph).map_err(located)
    }
}

fn load_system(path: &Path) -> Result<MassActionSystem, Failure> {
    match load_model(path)? {
        Model::Reaction(sys) => Ok(sys),
        Model::Graph(_) => Err(Failure::input(format!("{} is a graph, a reaction network is required", path.display()))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourcesFile {
    sources: BTreeMap<String, f64>,
    #[serde(default)]
    marked: Vec<String>,
}

struct ReactionParts {
    vs: ValidatedSystem,
    masg: Masg,
    pert: Perturbation,
}

struct Instance {
    net: Network,
    spec: SourceSpec,
    reaction: Option<ReactionParts>,
}

impl Instance {
    fn name(&self, u: usize) -> &str {
        self.net.vertex_name(u)
    }

    fn edge_name(&self, e: usize) -> String {
        let (u, v) = self.net.edge(e);
        format!("{}-{}", self.name(u), self.name(v))
    }

    fn per_edge(&self, values: impl IntoIterator<Item = Value>) -> Value {
        Value::Object((0..self.net.edge_count()).map(|e| self.edge_name(e)).zip(values).collect())
    }

    fn per_vertex(&self, values: &[f64]) -> Value {
        Value::Object(values.iter().enumerate().map(|(u, &v)| (self.name(u).to_string(), json!(v))).collect())
    }

    fn marked_names(&self) -> Vec<&str> {
        self.spec.marked().iter().map(|&m| self.name(m)).collect()
    }

    fn single_source(&self) -> Result<usize, Failure> {
        self.spec
            .single_source()
            .ok_or_else(|| Failure::input("this command needs a single source vertex"))
    }
}

fn load_instance(model: &Path, sources: &Path, o: &Options) -> Result<Instance, Failure> {
    match load_model(model)? {
        Model::Reaction(_) => load_reaction_instance(model, sources, o),
        Model::Graph(net) => {
            let (_, value) = read_json(sources)?;
            let file: SourcesFile =
                serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", sources.display())))?;
            let spec = SourceSpec::named(&net, file.sources.iter().map(|(k, &v)| (k.as_str(), v)), file.marked.iter().map(String::as_str))?;
            Ok(Instance { net, spec, reaction: None })
        }
    }
}

fn load_reaction_instance(crn: &Path, perturbation: &Path, o: &Options) -> Result<Instance, Failure> {
    let sys = load_system(crn)?;
    let pert = Perturbation::from_json(&sys, &read(perturbation)?)?;
    let vs = sys.validated(o.tol)?;
    let masg = build_masg(&vs)?;
    let spec = masg.source_spec(&pert)?;
    Ok(Instance {
        net: masg.network().clone(),
        spec,
        reaction: Some(ReactionParts { vs, masg, pert }),
    })
}

fn write_dot(o: &Options, dot: impl FnOnce() -> String) -> Result<(), Failure> {
    if let Some(path) = &o.dot {
        fs::write(path, dot()).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn unit_costs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    let mut params: BTreeMap<String, f64> = [("S", 1.0), ("U_star", 1.0)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    params.extend(pairs.iter().map(|&(k, v)| (k.to_string(), v)));
    params
}

fn cost_value(kind: CostKind, pairs: &[(&str, f64)]) -> Result<Value, Failure> {
    Ok(serde_json::to_value(cost_estimate(kind, &unit_costs(pairs))?).expect("cost serialises"))
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialise")
}


fn cmd_validate(model: &Path, o: &Options) -> RunResult {
    match load_model(model)? {
        Model::Graph(net) => Ok(Outcome::positive(json!({
            "kind": "graph",
            "connected": net.is_connected(),
            "vertices": net.vertex_count(),
            "edges": net.edge_count(),
            "total_weight": net.total_weight(),
        }))),
        Model::Reaction(sys) => {
            let report = sys.validate_assumptions(o.tol);
            if !report.all_pass() {
                return Err(Failure {
                    code: 3,
                    kind: "assumption_violated",
                    message: format!("assumptions violated: {}", report.issues.join("; ")),
                });
            }
            let mut result = to_value(&report);
            result["kind"] = json!("reaction_network");
            result["species"] = json!(sys.species_count());
            result["reactions"] = json!(sys.reaction_count());
            Ok(Outcome::positive(result))
        }
    }
}

fn cmd_masg(crn: &Path, perturbation: Option<&Path>, o: &Options) -> RunResult {
    let vs = load_system(crn)?.validated(o.tol)?;
    let masg = build_masg(&vs)?;
    let pert = perturbation.map(|p| Perturbation::from_json(vs.system(), &read(p)?).map_err(Failure::from)).transpose()?;
    let mflow = match &pert {
        Some(p) => Some(masg_flow(&masg, &vs.linearized_steady_state(p)?, p)?),
        None => None,
    };
    write_dot(o, || masg.to_dot())?;
    Ok(Outcome::positive(json!({
        "masg": masg.to_json(),
        "dictionary": to_value(&export_dictionary(&masg, pert.as_ref(), mflow.as_ref())),
    })))
}

fn cmd_steady(crn: &Path, perturbation: &Path, o: &Options) -> RunResult {
    let inst = load_reaction_instance(crn, perturbation, o)?;
    let parts = inst.reaction.as_ref().expect("reaction instance");
    let sys = parts.vs.system();
    let thermo = parts.vs.linearized_steady_state(&parts.pert)?;
    let mflow = masg_flow(&parts.masg, &thermo, &parts.pert)?;
    let by_reaction = |xs: &[f64]| -> Value {
        Value::Object(sys.reactions().iter().zip(xs).map(|(r, &x)| (r.id.clone(), json!(x))).collect())
    };
    let by_species = |xs: &[f64]| -> Value {
        Value::Object(sys.species().iter().zip(xs).map(|(s, &x)| (s.clone(), json!(x))).collect())
    };
    Ok(Outcome::positive(json!({
        "J": thermo.flux,
        "flux": by_reaction(&thermo.flux),
        "G": by_reaction(&thermo.onsager),
        "affinity": by_reaction(&thermo.affinity),
        "delta_mu": by_species(&thermo.delta_mu),
        "gauge_species": thermo.gauge_species.iter().map(|&s| sys.species()[s].as_str()).collect::<Vec<_>>(),
        "residual": thermo.residual,
        "Phi": gibbs_consumption(&thermo),
        "masg_flow": inst.per_edge(mflow.flow.0.iter().map(|&x| json!(x))),
        "masg_flow_energy": masg_flow_energy(&parts.masg, &mflow),
    })))
}

fn cmd_flow(inst: &Instance, o: &Options) -> RunResult {
    let ef = electrical_flow(&inst.net, &inst.spec)?;
    let check = verify_kirchhoff(&inst.net, &ef.flow, &inst.spec, o.tol);
    let mut result = json!({
        "flow": inst.per_edge(ef.flow.0.iter().map(|&x| json!(x))),
        "potential": inst.per_vertex(&ef.potential.0),
        "R": ef.effective_resistance,
        "W": inst.net.total_weight(),
        "kirchhoff": to_value(&check),
        "ET": inst.spec.single_source().map(|_| escape_time_from(&inst.net, &ef)),
    });
    if let Some(parts) = &inst.reaction {
        let thermo = parts.vs.linearized_steady_state(&parts.pert)?;
        let phi = gibbs_consumption(&thermo);
        result["Phi"] = json!(phi);
        result["Phi_minus_R"] = json!(phi - ef.effective_resistance);
    }
    write_dot(o, || inst.net.to_dot("network"))?;
    Ok(Outcome::positive(result))
}

fn cmd_detect(inst: &Instance, o: &Options) -> RunResult {
    let outcome = detect(&inst.net, &inst.spec, mode(o))?;
    let cost = if inst.spec.marked().is_empty() {
        Value::Null
    } else {
        let r = electrical_flow(&inst.net, &inst.spec)?.effective_resistance;
        let w = inst.net.total_weight();
        match &inst.reaction {
            Some(parts) => {
                let phi = gibbs_consumption(&parts.vs.linearized_steady_state(&parts.pert)?);
                cost_value(CostKind::DetectSpecies, &[("Phi", phi), ("W", w)])?
            }
            None => cost_value(CostKind::Detect, &[("R", r), ("W", w)])?,
        }
    };
    Ok(Outcome {
        negative: !outcome.answer,
        result: json!({
            "question": "is a marked vertex reachable from the sources?",
            "answer": outcome.answer,
            "overlap": outcome.overlap,
            "threshold": outcome.threshold,
            "estimates": to_value(&outcome.sampled),
            "marked": inst.marked_names(),
            "cost": cost,
        }),
    })
}

fn cmd_find(inst: &Instance, o: &Options) -> RunResult {
    let outcome = find(&inst.net, &inst.spec, o.seed)?;
    let dist = find_distribution(&inst.net, &inst.spec)?;
    let r = electrical_flow(&inst.net, &inst.spec)?.effective_resistance;
    let marked = inst.spec.marked().len() as f64;
    Ok(Outcome::positive(json!({
        "question": "which marked vertex does the walk find?",
        "answer": inst.name(outcome.vertex),
        "attempts": outcome.attempts,
        "marked_probability": outcome.marked_probability,
        "estimates": Value::Object(dist.iter().map(|&(m, p)| (inst.name(m).to_string(), json!(p))).collect()),
        "cost": cost_value(CostKind::Find, &[("R", r), ("W", inst.net.total_weight()), ("M", marked)])?,
    })))
}

fn cmd_flowstate(inst: &Instance, o: &Options) -> RunResult {
    let s = inst.single_source()?;
    let prepared = prepare_flow_state(&inst.net, s, inst.spec.marked(), o.epsilon, mode(o))?;
    let counts = measure_edges(&prepared.state, o.shots, o.seed)?;
    let ef = electrical_flow(&inst.net, &inst.spec)?;
    let et = escape_time_from(&inst.net, &ef);
    let cost = cost_value(
        CostKind::PrepareFlowState,
        &[("epsilon", o.epsilon), ("ET", et), ("R", ef.effective_resistance), ("w_s", inst.net.weighted_degree(s))],
    )?;
    Ok(Outcome::positive(json!({
        "trace_distance": prepared.trace_distance,
        "within_tolerance": prepared.within_tolerance,
        "success_probability": prepared.success_probability,
        "edge_probabilities": inst.per_edge(prepared.state.edge_probabilities().into_iter().map(|p| json!(p))),
        "counts": inst.per_edge(counts.into_iter().map(|c| json!(c))),
        "state": prepared.state.to_json(&inst.net),
        "cost": cost,
    })))
}

fn cmd_phi(inst: &Instance, o: &Options) -> RunResult {
    let parts = inst.reaction.as_ref().expect("reaction instance");
    let s = inst.single_source()?;
    let phi = estimate_phi(&parts.vs, &parts.pert, o.epsilon, mode(o))?;
    let flux = sample_flux_contribution(&parts.vs, &parts.pert, o.epsilon, o.shots, o.seed, mode(o))?;
    let per_reaction: Vec<Value> = flux
        .per_reaction
        .iter()
        .map(|c| {
            json!({
                "id": c.id,
                "J": c.j,
                "G": c.g,
                "J2_over_G": c.j2_over_g,
                "count": c.count,
                "frequency": c.frequency,
                "estimate": c.estimate,
            })
        })
        .collect();
    let w_s = inst.net.weighted_degree(s);
    let cost_pairs = [("epsilon", o.epsilon), ("ET_alt", phi.alt_escape_time), ("Phi", phi.gibbs), ("w_s", w_s)];
    Ok(Outcome::positive(json!({
        "question": "what is the Gibbs free-energy consumption rate?",
        "rigid": true,
        "solution_dimension": phi.solution_dimension,
        "R_alt": phi.alt_resistance,
        "ET_alt": phi.alt_escape_time,
        "Phi": phi.gibbs,
        "phi_estimate": phi.value,
        "calibration": phi.calibration,
        "estimates": to_value(&phi.sampled),
        "per_reaction": per_reaction,
        "flux_total": flux.total_estimate(),
        "trace_distance": flux.trace_distance,
        "seed": o.seed,
        "shots": o.shots,
        "cost": {
            "estimate_phi": cost_value(CostKind::EstimatePhi, &cost_pairs)?,
            "sample_flux": cost_value(CostKind::SampleFlux, &cost_pairs)?,
        },
    })))
}

fn cmd_rigidity(inst: &Instance, o: &Options) -> RunResult {
    let parts = inst.reaction.as_ref().expect("reaction instance");
    let report = check_rigidity(&inst.net, &RatioVector::from_masg(&parts.masg), &inst.spec)?;
    let flow_map = |f: &FlowVector| inst.per_edge(f.0.iter().map(|&x| json!(x)));
    let mut result = json!({
        "rigid": report.rigid,
        "solution_dimension": report.solution_dimension,
        "witness_flow": report.witness_flow.as_ref().map(flow_map),
    });
    if report.rigid && inst.spec.single_source().is_some() {
        let alt = build_alternative_neighbourhoods(&parts.masg)?;
        let res = alt_electrical_flow(&inst.net, &alt, &inst.spec)?;
        result["R_alt"] = json!(res.alt_resistance);
        result["ET_alt"] = json!(res.alt_escape_time);
        result["alt_flow"] = flow_map(&res.flow);
        result["alt_flow_energy"] = json!(flow_energy(&inst.net, &res.flow));
    }
    write_dot(o, || parts.masg.to_dot())?;
    Ok(Outcome { negative: !report.rigid, result })
}

fn cmd_cost(formula: &str, parameters: Option<&Path>, extra: &[(String, f64)]) -> RunResult {
    let kind = CostKind::from_name(formula)?;
    let mut params = BTreeMap::new();
    if let Some(path) = parameters {
        let (_, value) = read_json(path)?;
        let object: Map<String, Value> = serde_json::from_value(value)
            .map_err(|e| Failure::input(format!("{}: expected an object of numbers: {e}", path.display())))?;
        for (k, v) in object {
            let x = v.as_f64().ok_or_else(|| Failure::input(format!("parameter `{k}` is not a number")))?;
            params.insert(k, x);
        }
    }
    params.extend(extra.iter().cloned());
    let estimate = cost_estimate(kind, &params)?;
    let mut result = to_value(&estimate);
    result["required"] = json!(kind.parameters());
    Ok(Outcome::positive(result))
}
