//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Context};

use tq_core::codec;
use tq_core::covariance::{layer_covariances, Axis, GradConfig};

use tq_core::rdopt::{
    self, acceleration, compress_to_rate, frontier_csv, lagrangian_sweep, overhead_elements,
    prepare, stored_basis_cols, CurveConfig, SweepConfig, SweepPoint,
};
use tq_core::theory::{validate_source, validation_passes, McConfig, SyntheticSource};
use tq_core::toy::{Correlation, ToySpec};
use tq_core::transform::{coding_gain, elt, gain_decomposition, klt, TransformKind};

use crate::svg;
use crate::{CommonOpts, PipelineOpts, TransformArg};

pub enum Outcome {
    Success,
    ValidationFailed,
}

fn write_or_print(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn db(gain: f64) -> f64 {
    10.0 * gain.log10()
}

fn sweep_config(transform: TransformArg, pipeline: &PipelineOpts, common: &CommonOpts) -> SweepConfig {
    let (kind, axis) = transform.kind_axis();
    let mut cfg = SweepConfig::new(kind, axis);
    cfg.curve = CurveConfig {
        blocks: pipeline.blocks,
        max_bits: pipeline.max_bits,
        steps: if pipeline.steps == 0 { None } else { Some(pipeline.steps) },
    };
    cfg.ridge = pipeline.ridge;
    cfg.grad = GradConfig {
        probes: pipeline.probes,
        seed: common.seed,
        ..GradConfig::default()
    };
    cfg
}

pub const STATS_CSV_HEADER: &str = "layer,axis,klt_gain_db,klt_weight_db,klt_grad_db,elt_gain_db,elt_weight_db,elt_grad_db,overhead_pct";

pub fn stats(
    model: &Path,
    calib: &Path,
    axis: Axis,
    ridge: f64,
    seed: u64,
    out: Option<&Path>,
    svg_out: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let net = codec::read_network(model)?;
    let batch = codec::read_batch(calib)?;
    let grad_cfg = GradConfig { seed, ..GradConfig::default() };
    let mut csv = String::from(STATS_CSV_HEADER);
    csv.push('\n');
    let mut labels = Vec::new();
    let mut klt_dbs = Vec::new();
    let mut elt_dbs = Vec::new();
    for l in 0..net.len() {
        let pair = layer_covariances(&net, l, &batch, axis, ridge, &grad_cfg)?;
        let kplan = klt(&pair.weights, axis)?;
        let eplan = elt(&pair.weights, &pair.gradients, axis)?;
        let gk = coding_gain(&pair.weights, &pair.gradients, &kplan);
        let (gkw, gkg) = gain_decomposition(&pair.weights, &pair.gradients, &kplan);
        let ge = coding_gain(&pair.weights, &pair.gradients, &eplan);
        let (gew, geg) = gain_decomposition(&pair.weights, &pair.gradients, &eplan);
        let dims = net.layer(l).dims();
        let overhead = 100.0 * overhead_elements(dims, axis) as f64 / dims.weight_count() as f64;
        csv.push_str(&format!(
            "{l},{axis},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.2}\n",
            db(gk), db(gkw), db(gkg), db(ge), db(gew), db(geg), overhead
        ));
        labels.push(format!("L{l}"));
        klt_dbs.push(db(gk));
        elt_dbs.push(db(ge));
    }
    write_or_print(out, &csv)?;
    if let Some(p) = svg_out {
        let chart = svg::bar_chart(
            "Per-layer coding gains",
            "gain (dB)",
            &labels,
            &[("KLT".to_string(), klt_dbs), ("ELT".to_string(), elt_dbs)],
        );
        std::fs::write(p, chart)?;
    }
    Ok(Outcome::Success)
}

fn print_point_summary(point: &SweepPoint) {
    let b = &point.budget;
    println!("lambda              {:.6e}", point.lambda);
    println!("rate                {:.4} bits/weight", b.rate());
    println!(
        "  index bits        {} + basis bits {} over {} weights",
        b.index_bits(),
        b.basis_bits(),
        b.weight_count()
    );
    println!("compression ratio   {:.2}x", b.compression_ratio());
    println!("output distortion   {:.6e}", point.distortion);
    println!("top-1 agreement     {:.1}%", 100.0 * point.accuracy);
    println!("flop ratio          {:.4}", point.flop_ratio);
}

#[allow(clippy::too_many_arguments)]
pub fn compress(
    model: &Path,
    calib: &Path,
    transform: TransformArg,
    lambda: Option<f64>,
    target_rate: Option<f64>,
    out: &Path,
    pipeline: &PipelineOpts,
    common: &CommonOpts,
) -> anyhow::Result<Outcome> {
    let net = codec::read_network(model)?;
    let batch = codec::read_batch(calib)?;
    let cfg = sweep_config(transform, pipeline, common);
    let point = match (lambda, target_rate) {
        (Some(l), None) => {
            let prepared = prepare(&net, &batch, &cfg)?;
            prepared.evaluate(&net, &batch, l)?
        }
        (None, Some(rate)) => compress_to_rate(&net, &batch, &cfg, rate, 0.02)?,
        (None, None) => bail!("pass exactly one of --lambda or --target-rate"),
        (Some(_), Some(_)) => unreachable!("clap group enforces exclusivity"),
    };
    let meta = codec::write_tqz(out, &net, &point.plans, point.lambda)?;
    debug_assert_eq!(meta.budget().total_bits(), point.budget.total_bits());
    print_point_summary(&point);
    println!("wrote {}", out.display());
    Ok(Outcome::Success)
}

pub const EVAL_CSV_HEADER: &str = "layer,n,m,a,b,nonzero_rows,stored_rows,acceleration";

pub fn eval(tqz: &Path, model: &Path, calib: &Path, out: Option<&Path>) -> anyhow::Result<Outcome> {
    let (decoded, meta) = codec::read_tqz(tqz)?;
    let reference = codec::read_network(model)?;
    let batch = codec::read_batch(calib)?;
    let ref_out = reference.forward(&batch)?;
    let dec_out = decoded.forward(&batch)?;
    let distortion = tq_core::model::batch_sq_distance(&ref_out, &dec_out);
    let accuracy = rdopt::top1_agreement(&ref_out, &dec_out);
    let budget = meta.budget();

    let mut csv = String::from(EVAL_CSV_HEADER);
    csv.push('\n');
    let mut acc_num = 0.0;
    let mut acc_den = 0.0;
    for (l, lm) in meta.layers.iter().enumerate() {
        let d = lm.dims;
        let stored = match meta.kind {
            TransformKind::Klt | TransformKind::Elt => stored_basis_cols(d, meta.axis),
            _ => meta.axis.channels(d),
        };
        let a = match meta.kind {
            TransformKind::Klt | TransformKind::Elt => {
                acceleration(d, meta.axis, lm.nonzero_rows.min(stored))
            }
            _ => 1.0,
        };
        let w = reference.shape_at(l).len() as f64;
        acc_num += w * a;
        acc_den += w;
        csv.push_str(&format!(
            "{l},{},{},{},{},{},{stored},{a:.4}\n",
            d.n, d.m, d.a, d.b, lm.nonzero_rows
        ));
    }
    write_or_print(out, &csv)?;
    println!("transform           {} ({})", meta.kind, meta.axis);
    println!("lambda              {:.6e}", meta.lambda);
    println!("rate                {:.4} bits/weight", budget.rate());
    println!("compression ratio   {:.2}x", budget.compression_ratio());
    println!("output distortion   {:.6e}", distortion);
    println!("top-1 agreement     {:.1}%", 100.0 * accuracy);
    println!("flop ratio          {:.4}", acc_num / acc_den);
    Ok(Outcome::Success)
}

fn parse_lambdas(lambdas: Option<&str>, range: Option<&str>) -> anyhow::Result<Vec<f64>> {
    match (lambdas, range) {
        (Some(list), None) => list
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("bad lambda {s:?}: {e}")))
            .collect(),
        (None, Some(spec)) => {
            let parts: Vec<&str> = spec.split(':').collect();
            if parts.len() != 3 {
                bail!("--lambda-range wants lo:hi:count, got {spec:?}");
            }
            let lo: f64 = parts[0].parse()?;
            let hi: f64 = parts[1].parse()?;
            let count: usize = parts[2].parse()?;
            if !(lo > 0.0 && hi > lo && count >= 2) {
                bail!("--lambda-range needs 0 < lo < hi and count >= 2");
            }
            let step = (hi / lo).powf(1.0 / (count - 1) as f64);
            Ok((0..count).map(|i| lo * step.powi(i as i32)).collect())
        }
        _ => bail!("pass exactly one of --lambdas or --lambda-range"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &Path,
    calib: &Path,
    transform: TransformArg,
    lambdas: Option<&str>,
    lambda_range: Option<&str>,
    baseline_none: bool,
    out: &Path,
    svg_out: Option<&Path>,
    pipeline: &PipelineOpts,
    common: &CommonOpts,
) -> anyhow::Result<Outcome> {
    let net = codec::read_network(model)?;
    let batch = codec::read_batch(calib)?;
    let lams = parse_lambdas(lambdas, lambda_range)?;
    let cfg = sweep_config(transform, pipeline, common);
    let points = lagrangian_sweep(&net, &batch, &cfg, &lams)?;
    std::fs::write(out, frontier_csv(&points))?;
    println!("wrote {} ({} points)", out.display(), points.len());

    let mut series = vec![(
        format!("{}-{}", cfg.axis, cfg.kind),
        points.iter().map(|p| (p.budget.rate(), p.distortion)).collect::<Vec<_>>(),
    )];
    if baseline_none {
        let none_cfg = sweep_config(TransformArg::None, pipeline, common);
        let none_points = lagrangian_sweep(&net, &batch, &none_cfg, &lams)?;
        let none_path = out.with_extension("none.csv");
        std::fs::write(&none_path, frontier_csv(&none_points))?;
        println!("wrote {} ({} points)", none_path.display(), none_points.len());
        series.insert(
            0,
            (
                "none".to_string(),
                none_points.iter().map(|p| (p.budget.rate(), p.distortion)).collect(),
            ),
        );
    }
    if let Some(p) = svg_out {
        let chart = svg::line_plot(
            "Rate-distortion frontier",
            "rate (bits/weight)",
            "output distortion",
            &series,
            true,
        );
        std::fs::write(p, chart)?;
    }
    Ok(Outcome::Success)
}

pub const THEORY_CSV_HEADER: &str = "source,plan,depth,predicted,measured,ratio";

pub fn validate_theory(
    dim: usize,
    trials: usize,
    min_depth: u8,
    max_depth: u8,
    out: Option<&Path>,
    seed: u64,
) -> anyhow::Result<Outcome> {
    if min_depth == 0 || max_depth < min_depth {
        bail!("need 1 <= min-depth <= max-depth");
    }
    let depths: Vec<u8> = (min_depth..=max_depth).collect();
    let cfg = McConfig { trials, ..McConfig::default() };
    let sources = vec![
        ("white", SyntheticSource::white(dim, seed)),
        ("ar1", SyntheticSource::ar1(dim, 0.8, 0.5, seed.wrapping_add(1))?),
    ];
    let mut csv = String::from(THEORY_CSV_HEADER);
    csv.push('\n');
    let mut all_ok = true;
    for (name, src) in &sources {
        let rows = validate_source(name, src, &depths, &cfg)?;
        let ok = validation_passes(src, &rows);
        all_ok &= ok;
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{:.6e},{:.6e},{:.4}\n",
                r.source, r.plan, r.depth, r.predicted, r.measured, r.ratio
            ));
        }
        println!("source {name:8} {}", if ok { "ok" } else { "FAILED" });
    }
    write_or_print(out, &csv)?;
    Ok(if all_ok { Outcome::Success } else { Outcome::ValidationFailed })
}

pub fn gen_toy(
    arch: &str,
    correlation: &str,
    rho: f64,
    out: &Path,
    calib_out: &Path,
    calib_count: usize,
    seed: u64,
) -> anyhow::Result<Outcome> {
    let corr = match correlation {
        "white" => Correlation::White,
        "ar1-input" => Correlation::Ar1Input { rho },
        "ar1-output" => Correlation::Ar1Output { rho },
        other => bail!("unknown correlation {other:?} (white, ar1-input, ar1-output)"),
    };
    let mut spec = match arch {
        "conv3" => ToySpec::conv3(corr),
        "conv-dense" => ToySpec::conv_dense(),
        other => bail!("unknown architecture {other:?} (conv3, conv-dense)"),
    };
    spec.correlation = corr;
    let net = spec.build(seed)?;
    codec::write_network(out, &net)?;
    let batch = spec.calibration(seed, calib_count);
    codec::write_batch(calib_out, &batch)?;
    println!(
        "wrote {} ({} layers, {} weights) and {} ({} samples)",
        out.display(),
        net.len(),
        net.weight_count(),
        calib_out.display(),
        batch.count()
    );
    Ok(Outcome::Success)
}

