//! Subcommand implementations. Each one reads immutable input files from the
//! workspace directory, does its work, and writes artifacts back; the
//! effective config and its hash ride along with every run.

use crate::config::ExperimentConfig;
use grnnctl_core::controller::{build_controller, ControllerContext};
use grnnctl_core::graph::Topology;
use grnnctl_core::grnn::{weights_from_json, weights_to_json, NodeWeights};
use grnnctl_core::seed::{SeedSplitter, Stream};
use grnnctl_core::simnet;
use grnnctl_core::stability::{
    activation_bounds, build_augmented, certificate_report_json, input_box, search_certificate,
};
use grnnctl_core::system::{
    fmt_f64, rollout, solve_lqr, NetworkedSystem, Trajectory,
};
use grnnctl_core::training::{self, draw_initial_state, loss_history_csv, TrainOutput};
use grnnctl_core::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fs;
use std::path::Path;
use std::time::Instant;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|_| {
        Error::invalid(format!(
            "missing input file {} (run the producing subcommand first)",
            path.display()
        ))
    })
}

/// Echoes the effective config and a small meta document into the output
/// directory. `extra` lands inside meta.json under `details`.
fn write_run_info<T: Serialize>(
    dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    extra: &T,
) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a, T> {
        command: &'a str,
        config_sha256: String,
        details: &'a T,
    }
    write_file(dir, "config.toml", &cfg.to_toml())?;
    let meta = Meta {
        command,
        config_sha256: cfg.sha256(),
        details: extra,
    };
    write_file(dir, "meta.json", &serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn load_topology(dir: &Path) -> Result<Topology> {
    Topology::from_json(&read_file(dir, "topology.json")?)
}

fn load_system(dir: &Path) -> Result<(Topology, NetworkedSystem)> {
    let topology = load_topology(dir)?;
    let system = NetworkedSystem::from_json(&read_file(dir, "system.json")?, topology.clone())?;
    Ok((topology, system))
}

fn load_weights(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<NodeWeights>> {
    let weights = weights_from_json(&read_file(dir, "weights.json")?)?;
    for w in &weights {
        if w.state_dim() != cfg.state_dim
            || w.input_dim() != cfg.input_dim
            || w.hidden_dim() != cfg.hidden_dim
        {
            return Err(Error::invalid(
                "stored weights do not match the configured dimensions",
            ));
        }
    }
    Ok(weights)
}

fn initial_weights(cfg: &ExperimentConfig, nodes: usize, seeds: &SeedSplitter) -> Vec<NodeWeights> {
    (0..nodes)
        .map(|i| {
            let mut rng = seeds.rng(Stream::WeightInit, &[i as u64]);
            let mut w =
                NodeWeights::random_uniform(cfg.state_dim, cfg.hidden_dim, cfg.input_dim, &mut rng);
            w.scale(cfg.init_weight_scale);
            w
        })
        .collect()
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let topology = cfg.build_topology()?;
    let system = cfg.build_system(&topology)?;
    let rank = system.controllability_rank();
    write_file(out, "topology.json", &topology.to_json())?;
    write_file(out, "system.json", &system.to_json())?;
    #[derive(Serialize)]
    struct Details {
        nodes: usize,
        edges: usize,
        connected: bool,
        state_total: usize,
        controllability_rank: usize,
    }
    let details = Details {
        nodes: topology.n(),
        edges: topology.edge_count(),
        connected: topology.is_connected(),
        state_total: topology.n() * cfg.state_dim,
        controllability_rank: rank,
    };
    write_run_info(out, cfg, "generate", &details)?;
    println!(
        "generated {} nodes / {} edges; controllability rank {}/{}",
        details.nodes,
        details.edges,
        rank,
        details.state_total
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, log_messages: bool) -> Result<()> {
    let (topology, system) = load_system(out)?;
    let shift = cfg.shift_operator(&topology)?;
    let consensus = cfg.consensus(&topology)?;
    let activation = cfg.activation()?;
    let loss = cfg.loss(topology.n());
    let train_cfg = cfg.train_config()?;
    let seeds = SeedSplitter::new(cfg.seed);
    let init = initial_weights(cfg, topology.n(), &seeds);

    let started = Instant::now();
    let mut message_log = simnet::MessageLog::new();
    let output: TrainOutput = match cfg.engine.as_str() {
        "matrix" => {
            if log_messages {
                return Err(Error::invalid(
                    "--log-messages needs engine = \"message\"; the matrix engine passes no messages",
                ));
            }
            training::train(
                &system, &shift, &consensus, &init, &loss, &train_cfg, &activation, &seeds,
            )?
        }
        "message" => simnet::run_training(
            &system,
            &shift,
            &consensus,
            &init,
            &loss,
            &train_cfg,
            &activation,
            &seeds,
            log_messages.then_some(&mut message_log),
        )?,
        other => return Err(Error::invalid(format!("unknown engine '{other}'"))),
    };
    let elapsed = started.elapsed().as_secs_f64();

    write_file(out, "weights.json", &weights_to_json(&output.weights))?;
    write_file(out, "losses.csv", &loss_history_csv(&output.history))?;
    if log_messages {
        write_file(out, "messages.csv", &message_log.to_csv())?;
    }
    let train_curve = output.mean_train_loss();
    let test_curve = output.mean_test_loss();
    #[derive(Serialize)]
    struct Details {
        engine: String,
        epochs: usize,
        seconds: f64,
        final_train_loss: Option<f64>,
        final_test_loss: Option<f64>,
        messages_logged: usize,
    }
    write_run_info(
        out,
        cfg,
        "train",
        &Details {
            engine: cfg.engine.clone(),
            epochs: cfg.epochs,
            seconds: elapsed,
            final_train_loss: train_curve.last().copied(),
            final_test_loss: test_curve.last().copied(),
            messages_logged: message_log.len(),
        },
    )?;
    if let (Some(tr), Some(te)) = (train_curve.last(), test_curve.last()) {
        println!(
            "trained {} epochs in {elapsed:.2}s; final train loss {tr:.4}, test loss {te:.4}",
            cfg.epochs
        );
    } else {
        println!("trained 0 epochs (nothing to do)");
    }
    Ok(())
}

/// Quadratic rollout cost with identity weights, matching the training loss
/// summed over nodes: `Σ_t<T (|x|² + |u|²) + |x(T)|²`.
fn trajectory_cost(traj: &Trajectory, horizon: usize) -> f64 {
    let mut acc = 0.0;
    for t in 0..horizon {
        acc += traj.states[t].norm_squared();
        acc += traj.controls[t].norm_squared();
    }
    acc + traj.states[horizon].norm_squared()
}

fn mean_abs(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, controller_name: &str) -> Result<()> {
    let (topology, system) = load_system(out)?;
    let shift = cfg.shift_operator(&topology)?;
    let activation = cfg.activation()?;
    let seeds = SeedSplitter::new(cfg.seed);
    let nn = topology.n() * cfg.state_dim;

    let lqr;
    let weights;
    let mut ctx = ControllerContext::new(&system);
    match controller_name {
        "lqr" => {
            let eye_x = DMatrix::identity(nn, nn);
            let eye_u = DMatrix::identity(system.b().ncols(), system.b().ncols());
            lqr = solve_lqr(&system, &eye_x, &eye_u, &eye_x)?;
            ctx = ctx.with_lqr(&lqr);
        }
        "grnn" => {
            weights = load_weights(out, cfg)?;
            ctx = ctx.with_grnn(&weights, &shift, activation.clone());
        }
        _ => {}
    }
    let mut controller = build_controller(controller_name, &ctx)?;

    let mut costs = Vec::with_capacity(cfg.eval_samples);
    let mut first_traj: Option<Trajectory> = None;
    for s in 0..cfg.eval_samples {
        let mut rng = seeds.rng(Stream::Eval, &[s as u64]);
        let x0 = draw_initial_state(nn, cfg.init_mean, cfg.init_std, &mut rng);
        controller.reset();
        let traj = rollout(
            &system,
            controller.as_mut(),
            x0,
            cfg.eval_horizon + 1,
            &mut rng,
        )?;
        costs.push(trajectory_cost(&traj, cfg.eval_horizon));
        if first_traj.is_none() {
            first_traj = Some(traj);
        }
    }
    let mean_cost = costs.iter().sum::<f64>() / costs.len().max(1) as f64;

    let traj_name = format!("trajectory_{controller_name}.csv");
    if let Some(traj) = &first_traj {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        write_file(out, &traj_name, &String::from_utf8_lossy(&buf))?;
    }
    #[derive(Serialize)]
    struct Details {
        controller: String,
        samples: usize,
        horizon: usize,
        mean_cost: f64,
        costs: Vec<f64>,
    }
    write_run_info(
        out,
        cfg,
        "evaluate",
        &Details {
            controller: controller_name.to_string(),
            samples: cfg.eval_samples,
            horizon: cfg.eval_horizon,
            mean_cost,
            costs,
        },
    )?;
    println!("{controller_name}: mean rollout cost {mean_cost:.4} over {} samples", cfg.eval_samples);
    Ok(())
}

pub fn cmd_compare_lqr(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (topology, system) = load_system(out)?;
    let shift = cfg.shift_operator(&topology)?;
    let activation = cfg.activation()?;
    let weights = load_weights(out, cfg)?;
    let seeds = SeedSplitter::new(cfg.seed);
    let nn = topology.n() * cfg.state_dim;
    let mn = system.b().ncols();
    let eye_x = DMatrix::identity(nn, nn);
    let eye_u = DMatrix::identity(mn, mn);
    let lqr = solve_lqr(&system, &eye_x, &eye_u, &eye_x)?;

    let ctx = ControllerContext::new(&system);
    let mut grnn = build_controller("grnn", &ctx.with_grnn(&weights, &shift, activation.clone()))?;
    let ctx = ControllerContext::new(&system);
    let mut lqr_ctrl = build_controller("lqr", &ctx.with_lqr(&lqr))?;

    let horizon = cfg.eval_horizon;
    let mut avg_state = [vec![0.0; horizon + 1], vec![0.0; horizon + 1]];
    let mut avg_ctrl = [vec![0.0; horizon + 1], vec![0.0; horizon + 1]];
    for s in 0..cfg.eval_samples {
        // The same stream for both controllers: identical initial state and
        // identical noise realization, so the comparison is paired.
        for (which, ctrl) in [&mut grnn, &mut lqr_ctrl].into_iter().enumerate() {
            let mut rng = seeds.rng(Stream::Eval, &[s as u64]);
            let x0 = draw_initial_state(nn, cfg.init_mean, cfg.init_std, &mut rng);
            ctrl.reset();
            let traj = rollout(&system, ctrl.as_mut(), x0, horizon + 1, &mut rng)?;
            for t in 0..=horizon {
                avg_state[which][t] += mean_abs(&traj.states[t]);
                avg_ctrl[which][t] += mean_abs(&traj.controls[t]);
            }
        }
    }
    let samples = cfg.eval_samples.max(1) as f64;
    for series in avg_state.iter_mut().chain(avg_ctrl.iter_mut()) {
        for v in series.iter_mut() {
            *v /= samples;
        }
    }

    let mut csv = String::from("t,avg_state_grnn,avg_state_lqr,avg_ctrl_grnn,avg_ctrl_lqr\n");
    for t in 0..=horizon {
        csv.push_str(&format!(
            "{t},{},{},{},{}\n",
            fmt_f64(avg_state[0][t]),
            fmt_f64(avg_state[1][t]),
            fmt_f64(avg_ctrl[0][t]),
            fmt_f64(avg_ctrl[1][t])
        ));
    }
    write_file(out, "compare.csv", &csv)?;

    // Noise-free paired costs: the optimality oracle. LQR minimizes this
    // cost globally, so grnn_cost >= lqr_cost on every sample or something
    // is wrong with the simulation.
    let quiet = NetworkedSystem::from_parts(
        topology.clone(),
        system.a().clone(),
        system.b().clone(),
        cfg.state_dim,
        cfg.input_dim,
        0.0,
    )?;
    let mut pairs = Vec::with_capacity(cfg.eval_samples);
    for s in 0..cfg.eval_samples {
        let mut cost_pair = [0.0; 2];
        for (which, ctrl) in [&mut grnn, &mut lqr_ctrl].into_iter().enumerate() {
            let mut rng = seeds.rng(Stream::Eval, &[s as u64]);
            let x0 = draw_initial_state(nn, cfg.init_mean, cfg.init_std, &mut rng);
            ctrl.reset();
            let traj = rollout(&quiet, ctrl.as_mut(), x0, horizon + 1, &mut rng)?;
            cost_pair[which] = trajectory_cost(&traj, horizon);
        }
        pairs.push(cost_pair);
    }

    #[derive(Serialize)]
    struct Details {
        horizon: usize,
        samples: usize,
        grnn_cost_noise_free: Vec<f64>,
        lqr_cost_noise_free: Vec<f64>,
        final_avg_state_grnn: f64,
        final_avg_state_lqr: f64,
    }
    let details = Details {
        horizon,
        samples: cfg.eval_samples,
        grnn_cost_noise_free: pairs.iter().map(|p| p[0]).collect(),
        lqr_cost_noise_free: pairs.iter().map(|p| p[1]).collect(),
        final_avg_state_grnn: avg_state[0][horizon],
        final_avg_state_lqr: avg_state[1][horizon],
    };
    write_run_info(out, cfg, "compare-lqr", &details)?;
    println!(
        "t={horizon}: avg |x| grnn {:.4} vs lqr {:.4}; noise-free mean cost {:.2} vs {:.2}",
        details.final_avg_state_grnn,
        details.final_avg_state_lqr,
        details.grnn_cost_noise_free.iter().sum::<f64>() / samples,
        details.lqr_cost_noise_free.iter().sum::<f64>() / samples,
    );
    Ok(())
}

pub fn cmd_certify(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (topology, system) = load_system(out)?;
    let shift = cfg.shift_operator(&topology)?;
    let activation = cfg.activation()?;
    let weights = load_weights(out, cfg)?;
    let nn = topology.n() * cfg.state_dim;

    let t0 = Instant::now();
    let blocks = grnnctl_core::grnn::stacked_weight_blocks(&weights)?;
    let x_lo = DVector::from_element(nn, -cfg.state_box);
    let x_hi = DVector::from_element(nn, cfg.state_box);
    let (h_lo, h_hi) = input_box(
        &blocks,
        shift.matrix(),
        cfg.state_dim,
        activation.as_ref(),
        &x_lo,
        &x_hi,
    )?;
    let bounds = activation_bounds(activation.as_ref(), &h_lo, &h_hi)?;
    let t_bounds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let aug = build_augmented(&system, &weights, shift.matrix(), &bounds)?;
    let t_assemble = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let cert = search_certificate(&aug, &bounds, &cfg.search_budget(), cfg.epsilon)?;
    let t_search = t2.elapsed().as_secs_f64();

    write_file(out, "certificate.json", &certificate_report_json(&cert, &bounds)?)?;
    #[derive(Serialize)]
    struct Details {
        verdict: String,
        epsilon: f64,
        seconds_bounds: f64,
        seconds_assembly: f64,
        seconds_search: f64,
    }
    write_run_info(
        out,
        cfg,
        "certify",
        &Details {
            verdict: cert.verdict.as_str().to_string(),
            epsilon: cfg.epsilon,
            seconds_bounds: t_bounds,
            seconds_assembly: t_assemble,
            seconds_search: t_search,
        },
    )?;
    println!(
        "{} (bounds {t_bounds:.3}s, assembly {t_assemble:.3}s, search {t_search:.3}s)",
        cert.verdict.as_str()
    );
    for note in &cert.notes {
        println!("  note: {note}");
    }
    Ok(())
}

fn cpu_description() -> (String, usize) {
    let cores = std::thread::available_parallelism()
        .map(|c| c.get())
        .unwrap_or(1);
    let model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    (model, cores)
}

/// Least-squares fit `y = a + b x`, returning (a, b, r²).
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (a + b * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

pub fn cmd_scaling(cfg: &ExperimentConfig, out: &Path, sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("scaling needs at least two network sizes"));
    }
    // Path graphs: maximum degree 2 at every size, so per-node work is flat
    // and total per-epoch time should grow linearly in N.
    let mut rows = Vec::with_capacity(sizes.len());
    for &n_nodes in sizes {
        let topology = Topology::path(n_nodes)?;
        let system = grnnctl_core::system::generate_system(
            &topology,
            cfg.state_dim,
            cfg.input_dim,
            cfg.scale,
            cfg.noise_std,
            cfg.seed,
        )?;
        let shift = cfg.shift_operator(&topology)?;
        let consensus = cfg.consensus(&topology)?;
        let activation = cfg.activation()?;
        let loss = cfg.loss(n_nodes);
        let mut train_cfg = cfg.train_config()?;
        train_cfg.epochs = cfg.scaling_epochs;
        let seeds = SeedSplitter::new(cfg.seed);
        let init = initial_weights(cfg, n_nodes, &seeds);
        let started = Instant::now();
        training::train(
            &system, &shift, &consensus, &init, &loss, &train_cfg, &activation, &seeds,
        )?;
        let secs = started.elapsed().as_secs_f64() / cfg.scaling_epochs.max(1) as f64;
        println!(
            "N={n_nodes}: {secs:.4}s per epoch ({:.5}s per node)",
            secs / n_nodes as f64
        );
        rows.push((n_nodes, secs));
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (intercept, slope, r2) = linear_fit(&xs, &ys);
    let (cpu, cores) = cpu_description();

    let mut csv = String::from("nodes,seconds_per_epoch,seconds_per_node_epoch\n");
    for (n_nodes, secs) in &rows {
        csv.push_str(&format!(
            "{n_nodes},{},{}\n",
            fmt_f64(*secs),
            fmt_f64(secs / *n_nodes as f64)
        ));
    }
    write_file(out, "scaling.csv", &csv)?;
    #[derive(Serialize)]
    struct Details {
        sizes: Vec<usize>,
        seconds_per_epoch: Vec<f64>,
        fit_intercept: f64,
        fit_slope: f64,
        r_squared: f64,
        cpu: String,
        cores: usize,
        epochs_timed: usize,
    }
    write_run_info(
        out,
        cfg,
        "scaling",
        &Details {
            sizes: rows.iter().map(|r| r.0).collect(),
            seconds_per_epoch: ys.clone(),
            fit_intercept: intercept,
            fit_slope: slope,
            r_squared: r2,
            cpu,
            cores,
            epochs_timed: cfg.scaling_epochs,
        },
    )?;
    println!("linear fit: {intercept:.4} + {slope:.5}·N, R² = {r2:.4}");
    Ok(())
}
