//! Subcommand implementations. Each returns whether every check passed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, PolicyChoice};
use super::output::{format_sig, line_chart, write_fig1, write_fig2, Row, Series};
use crate::bounds::{self, BoundsReport};
use crate::dp;
use crate::error::Result;
use crate::model::{ChannelSpec, ChannelTables, Scenario};
use crate::oracle::{truncated_kl_vs_ecb, KL_TOL};
use crate::policy::{cumulative_log_odds, proposed_sensing_rate, shiryaev_update, PolicyKind, ShiryaevState};
use crate::simulate::estimate;

/// Largest `|ln alpha|` at which Monte-Carlo PFA checks are meaningful.
pub const MC_PFA_LIMIT: f64 = 6.0;

fn policy_for(choice: PolicyChoice, s: &Scenario, cfg: &ExperimentConfig) -> Result<PolicyKind> {
    Ok(match choice {
        PolicyChoice::Innocent => PolicyKind::innocent_for(s),
        PolicyChoice::ConstantBeta => PolicyKind::proposed(s)?,
        PolicyChoice::Dp => PolicyKind::Dp(Arc::new(dp::solve(s, &cfg.dp)?)),
    })
}

/// Simulates every (policy, grid point) pair.
pub fn rows(cfg: &ExperimentConfig, log: &mut dyn Write) -> Result<Vec<Row>> {
    let channel = cfg.channel()?;
    let mut out = Vec::new();
    for &choice in &cfg.policies {
        for &l in &cfg.grid {
            let s = cfg.scenario(&channel, l)?;
            let report = BoundsReport::compute(&s)?;
            let policy = policy_for(choice, &s, cfg)?;
            let m = estimate(&s, &policy, cfg.n_runs, cfg.seed)?;
            if m.cap_hits > 0 {
                let _ = writeln!(log, "warning: {} runs hit the length cap ({} at |ln alpha| = {l})", m.cap_hits, choice.name());
            }
            let _ = writeln!(
                log,
                "{:<14} |ln alpha| = {l:>2}  ADD = {:>10}  PFA = {:>10}  ECB = {:>10}  ({:.2} s)",
                choice.name(),
                format_sig(m.add_mean, 6),
                format_sig(m.pfa_mean, 4),
                format_sig(m.ecb_mean, 4),
                m.wall_time_s
            );
            out.push(Row {
                policy: choice.name(),
                abs_ln_alpha: s.abs_ln_alpha,
                alpha: s.alpha,
                beta_star: report.beta_star,
                n_runs: m.n_runs,
                add_mean: m.add_mean,
                add_stderr: m.add_stderr,
                pfa_mean: m.pfa_mean,
                pfa_stderr: m.pfa_stderr,
                ecb_mean: m.ecb_mean,
                ecb_stderr: m.ecb_stderr,
                add_upper: report.add_upper,
                add_relaxed: report.add_relaxed,
                converse_two_term: report.converse_lower_second_order,
                first_order: report.first_order,
                innocent_add: report.innocent_add,
                seed: m.seed,
                cap_hits: m.cap_hits,
            });
        }
    }
    Ok(out)
}

fn charts(rows: &[Row], normalized: bool) -> String {
    let scale = |r: &Row| if normalized { r.abs_ln_alpha } else { 1.0 };
    let mut series = Vec::new();
    let mut names: Vec<&str> = rows.iter().map(|r| r.policy).collect();
    names.dedup();
    for name in names {
        series.push(Series {
            name: format!("{name} (MC)"),
            points: rows.iter().filter(|r| r.policy == name).map(|r| (r.abs_ln_alpha, r.add_mean / scale(r))).collect(),
            dashed: false,
        });
    }
    let first = rows.first().map(|r| r.policy).unwrap_or_default();
    let curve = |name: &str, f: fn(&Row) -> f64| Series {
        name: name.into(),
        points: rows.iter().filter(|r| r.policy == first).map(|r| (r.abs_ln_alpha, f(r) / scale(r))).collect(),
        dashed: true,
    };
    series.push(curve("ADD upper bound", |r| r.add_upper));
    series.push(curve("innocent (exact)", |r| r.innocent_add));
    series.push(curve("|ln a| / d", |r| r.first_order));
    series.push(curve("second-order", |r| r.converse_two_term));
    if normalized {
        line_chart("ADD / |ln alpha| versus |ln alpha|", "|ln alpha|", "ADD / |ln alpha|", &series)
    } else {
        line_chart("ADD versus |ln alpha|", "|ln alpha|", "ADD", &series)
    }
}

/// `reproduce`: writes `fig1.csv`, `fig2.csv`, `fig1.svg` and `fig2.svg`.
pub fn reproduce(cfg: &ExperimentConfig, out: Option<&Path>, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let dir = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    std::fs::create_dir_all(&dir)?;
    let rows = rows(cfg, log)?;
    let files = [dir.join("fig1.csv"), dir.join("fig2.csv"), dir.join("fig1.svg"), dir.join("fig2.svg")];
    write_fig1(&files[0], &rows)?;
    write_fig2(&files[1], &rows)?;
    std::fs::write(&files[2], charts(&rows, false))?;
    std::fs::write(&files[3], charts(&rows, true))?;
    Ok(files.to_vec())
}

/// Collects PASS/FAIL lines.
struct Checks<'a> {
    log: &'a mut dyn Write,
    failed: usize,
}

impl Checks<'_> {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(self.log, "{tag} {name}: {detail}");
        if !ok {
            self.failed += 1;
        }
    }
}

fn same_tables(a: &ChannelTables, b: &ChannelTables) -> bool {
    let close = |u: &[f64], v: &[f64]| u.len() == v.len() && u.iter().zip(v).all(|(p, q)| (p - q).abs() <= 1e-12);
    a.y_size == b.y_size
        && a.z_size == b.z_size
        && close(&a.x0_theta0, &b.x0_theta0)
        && close(&a.x0_theta1, &b.x0_theta1)
        && close(&a.x1_theta0, &b.x1_theta0)
        && close(&a.x1_theta1, &b.x1_theta1)
}

fn check_constants(c: &mut Checks, cfg: &ExperimentConfig, ch: &ChannelSpec) {
    c.record(
        "divergence constants",
        ch.info > 0.0 && ch.info_second_moment >= ch.info * ch.info && ch.chi2_pre > 0.0 && ch.chi2_post > 0.0,
        format!(
            "D = {}, V = {}, chi2_0 = {}, chi2_1 = {}",
            format_sig(ch.info, 10),
            format_sig(ch.info_second_moment, 10),
            format_sig(ch.chi2_pre, 10),
            format_sig(ch.chi2_post, 10)
        ),
    );
    if same_tables(&cfg.scenario.channel, &ChannelTables::reference()) {
        let ln4 = 4f64.ln();
        let ok = (ch.info - 0.6 * ln4).abs() < 1e-9
            && (ch.info_second_moment - ln4 * ln4).abs() < 1e-9
            && (ch.chi2_post - 16.0 / 21.0).abs() < 1e-12
            && (ch.chi2_pre - 1.0 / 6.0).abs() < 1e-12;
        c.record("reference constants", ok, "D = 0.6 ln 4, V = (ln 4)^2, chi2 = 16/21 and 1/6".into());
    }
}

fn check_recursion(c: &mut Checks, s: &Scenario, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=50);
        let beta: f64 = rng.gen();
        let mut state = ShiryaevState::new();
        let mut llrs = Vec::with_capacity(len);
        for _ in 0..len {
            let x = usize::from(rng.gen_bool(beta));
            let y = rng.gen_range(0..s.channel.y_size());
            state = shiryaev_update(state, x, y, &s.prior, &s.channel)?;
            llrs.push(s.channel.modulated_llr(x, y)?);
        }
        let direct = cumulative_log_odds(&s.prior, &llrs).unwrap_or(f64::NEG_INFINITY);
        let rec = state.log_odds.unwrap_or(f64::NEG_INFINITY);
        worst = worst.max((rec - direct).abs() / (1.0 + direct.abs()));
    }
    c.record("recursion vs cumulative form", worst <= 1e-9, format!("1000 traces, worst relative error {worst:.2e}"));
    Ok(())
}

fn check_oracle(c: &mut Checks, s: &Scenario, betas: &[f64], horizons: std::ops::RangeInclusive<usize>) -> Result<()> {
    for &beta in betas {
        let policy = PolicyKind::constant_beta(beta)?;
        let mut prev = 0.0;
        let mut ok = true;
        let mut detail = Vec::new();
        for n in horizons.clone() {
            let r = truncated_kl_vs_ecb(s, &policy, n)?;
            ok &= r.chain_holds() && r.true_kl >= prev - KL_TOL;
            prev = r.true_kl;
            detail.push(format!("N={n}: {} <= {}", format_sig(r.true_kl, 4), format_sig(r.ecb_truncated, 4)));
        }
        c.record(&format!("covertness chain beta = {beta}"), ok, detail.join(", "));
    }
    Ok(())
}

fn check_sandwich(c: &mut Checks, cfg: &ExperimentConfig, ch: &Arc<ChannelSpec>) -> Result<()> {
    let mut ok = true;
    let mut evaluated = 0;
    for &l in &cfg.grid {
        let s = cfg.scenario(ch, l)?;
        let upper = bounds::add_upper(&s, proposed_sensing_rate(&s)?)?;
        if let Ok(lower) = bounds::exact_quadratic_root_lower(&s) {
            ok &= lower <= upper;
            evaluated += 1;
        }
    }
    c.record("bound sandwich", ok, format!("exact converse <= ADD upper bound at {evaluated} grid points"));
    Ok(())
}

fn check_mc(c: &mut Checks, cfg: &ExperimentConfig, ch: &Arc<ChannelSpec>, log_rows: bool) -> Result<()> {
    for &l in &cfg.grid {
        let s = cfg.scenario(ch, l)?;
        let beta = proposed_sensing_rate(&s)?;
        let m = estimate(&s, &PolicyKind::constant_beta(beta)?, cfg.n_runs, cfg.seed)?;
        let upper = bounds::add_upper(&s, beta)?;
        let ecb_ok = m.ecb_mean <= s.delta + 3.0 * m.ecb_stderr;
        let add_ok = m.add_mean <= upper + 3.0 * m.add_stderr;
        // The stopping posterior bounds the conditional false-alarm
        // probability by alpha on every path, so its mean does too.
        let analytic_ok = m.posterior_pfa_mean <= s.alpha;
        let pfa_ok = f64::from(l) > MC_PFA_LIMIT || m.pfa_mean <= s.alpha + 3.0 * m.pfa_stderr;
        let ok = ecb_ok && add_ok && analytic_ok && pfa_ok && m.cap_hits == 0;
        if log_rows || !ok {
            c.record(
                &format!("Monte Carlo |ln alpha| = {l}"),
                ok,
                format!(
                    "ECB {} (delta {}), ADD {} (upper {}), PFA {} (alpha {}), caps {}",
                    format_sig(m.ecb_mean, 4),
                    format_sig(s.delta, 4),
                    format_sig(m.add_mean, 5),
                    format_sig(upper, 5),
                    format_sig(m.pfa_mean, 4),
                    format_sig(s.alpha, 4),
                    m.cap_hits
                ),
            );
        }
    }
    Ok(())
}

fn check_zero_budget(c: &mut Checks, cfg: &ExperimentConfig, ch: &Arc<ChannelSpec>) -> Result<()> {
    let s = cfg.scenario(ch, cfg.grid[0])?.with_delta(0.0)?;
    let beta = proposed_sensing_rate(&s)?;
    let m = estimate(&s, &PolicyKind::constant_beta(beta)?, cfg.n_runs.min(2000), cfg.seed)?;
    c.record(
        "zero budget",
        beta == 0.0 && m.ecb_mean == 0.0 && m.actions_mean == 0.0,
        format!("beta* = {beta}, no probes in {} runs", m.n_runs),
    );
    Ok(())
}

/// `verify`: runs every check and reports PASS/FAIL per line.
pub fn verify(cfg: &ExperimentConfig, log: &mut dyn Write) -> Result<bool> {
    let ch = match cfg.channel() {
        Ok(ch) => ch,
        Err(e) => {
            let _ = writeln!(log, "FAIL channel validation: {e}");
            return Ok(false);
        }
    };
    let mut c = Checks { log, failed: 0 };
    c.record("channel validation", true, "modelling assumptions hold".into());
    check_constants(&mut c, cfg, &ch);
    let s = cfg.scenario(&ch, cfg.grid[0])?;
    check_recursion(&mut c, &s, cfg.seed)?;
    // A vanishing alpha keeps the rule running for the whole horizon.
    let long = s.with_abs_ln_alpha(40.0)?;
    check_oracle(&mut c, &long, &[0.1, 0.5, 1.0], 1..=6)?;
    check_sandwich(&mut c, cfg, &ch)?;
    check_mc(&mut c, cfg, &ch, true)?;
    check_zero_budget(&mut c, cfg, &ch)?;
    let failed = c.failed;
    let _ = writeln!(c.log, "{}", if failed == 0 { "all checks passed".to_string() } else { format!("{failed} check(s) failed") });
    Ok(failed == 0)
}

/// `dp-solve`: solves the DP at every grid point and writes the policies as
/// a JSON array.
pub fn dp_solve(cfg: &ExperimentConfig, out: &Path, log: &mut dyn Write) -> Result<()> {
    let ch = cfg.channel()?;
    let mut policies = Vec::new();
    for &l in &cfg.grid {
        let s = cfg.scenario(&ch, l)?;
        let p = dp::solve(&s, &cfg.dp)?;
        if let Some(ev) = p.evaluation {
            let _ = writeln!(
                log,
                "|ln alpha| = {l:>2}  lambda = {}  ADD = {}  ECB = {} (delta {})",
                format_sig(p.lambda, 4),
                format_sig(ev.add_mean, 6),
                format_sig(ev.ecb_mean, 4),
                format_sig(s.delta, 4)
            );
        }
        policies.push(p);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(&policies).map_err(|e| crate::Error::Io(e.to_string()))?;
    std::fs::write(out, text)?;
    Ok(())
}

/// `oracle`: exact covertness comparison at one horizon and sensing rate.
/// The threshold uses the first grid value of `|ln alpha|`.
pub fn oracle(cfg: &ExperimentConfig, horizon: usize, beta: f64, log: &mut dyn Write) -> Result<bool> {
    let ch = cfg.channel()?;
    let s = cfg.scenario(&ch, cfg.grid[0])?;
    let r = truncated_kl_vs_ecb(&s, &PolicyKind::constant_beta(beta)?, horizon)?;
    let _ = writeln!(log, "horizon {horizon}, beta {beta}, |ln alpha| {}", s.abs_ln_alpha);
    let _ = writeln!(log, "true KL            {}", format_sig(r.true_kl, 12));
    let _ = writeln!(log, "convexity bound    {}", format_sig(r.mixture_kl_bound, 12));
    let _ = writeln!(log, "truncated ECB      {}", format_sig(r.ecb_truncated, 12));
    let _ = writeln!(log, "1 - sqrt(KL / 2)   {}", format_sig(r.detection_error_floor, 12));
    let _ = writeln!(log, "{:>4} {:>14} {:>16} {:>16}", "k", "weight", "conditional KL", "conditional ECB");
    for k in &r.per_changepoint {
        let label = if k.k as usize > horizon { format!(">{horizon}") } else { k.k.to_string() };
        let _ = writeln!(
            log,
            "{label:>4} {:>14} {:>16} {:>16}",
            format_sig(k.weight, 6),
            format_sig(k.conditional_kl, 8),
            format_sig(k.conditional_ecb, 8)
        );
    }
    let ok = r.chain_holds();
    let _ = writeln!(log, "{} chain", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
