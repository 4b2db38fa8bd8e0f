//! Text checkpoints and trajectory logs.
//!
//! A checkpoint is UTF-8 text, one record per line:
//!
//! ```text
//! hololeaf-checkpoint 1
//! config <RunConfig as JSON>
//! step <u64>
//! paths <n>
//! path <fields...>        (n lines)
//! end
//! ```
//!
//! Floats are written as 16 hex digits of their little-endian IEEE-754
//! bytes, so values round-trip exactly. A `path` line holds, in order:
//!
//! | fields | meaning |
//! |---|---|
//! | `id group` | path index and start group |
//! | `chart u.re u.im v.re v.im` | walker point |
//! | `steps log_h` | steps taken, log holonomy |
//! | `n0.re n0.im n1.re n1.im` | unit normal |
//! | `0` or `1 sing la0 la1 arg0 arg1` | eigen-coordinates while deep |
//! | `stream word_pos` | random stream and position (`word_pos` decimal u128) |
//! | 7 × u64 | walker flags |
//! | `sing entry_steps entry_log zeta.re zeta.im tripped` | box visit (`sing = -1` if none) |
//! | accumulators | see [`PathAccum`], in declaration order; a running sum is `sum count` |
//! | `-` or hex UTF-8 | abort reason |

use crate::chart::ChartPoint;
use crate::error::{Error, Result};
use crate::estimators::{PathAccum, PathState, RunConfig, TrajectoryRow, TRUST_BINS};
use crate::rng::StreamPos;
use crate::stats::RunningSum;
use crate::walker::{BoxVisit, DeepCoords, LeafWalkerState, WalkerFlags};
use crate::C64;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &str = "hololeaf-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub paths: Vec<PathState>,
}

fn hex_f64(x: f64) -> String {
    x.to_le_bytes().iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_hex_f64(t: &str) -> Option<f64> {
    if t.len() != 16 {
        return None;
    }
    let mut b = [0u8; 8];
    for (i, byte) in b.iter_mut().enumerate() {
        *byte = u8::from_str_radix(t.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(f64::from_le_bytes(b))
}

struct Out(Vec<String>);

impl Out {
    fn f(&mut self, x: f64) {
        self.0.push(hex_f64(x));
    }
    fn c(&mut self, z: C64) {
        self.f(z.re);
        self.f(z.im);
    }
    fn u(&mut self, x: impl ToString) {
        self.0.push(x.to_string());
    }
    fn sum(&mut self, r: &RunningSum) {
        self.f(r.sum);
        self.u(r.count);
    }
}

struct In<'a> {
    toks: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl In<'_> {
    fn err(&self, what: &str) -> Error {
        Error::Checkpoint(format!("line {}: bad {what}", self.line))
    }
    fn tok(&mut self, what: &str) -> Result<&str> {
        self.toks.next().ok_or_else(|| self.err(what))
    }
    fn f(&mut self) -> Result<f64> {
        let t = self.tok("float")?;
        parse_hex_f64(t).ok_or_else(|| self.err("float"))
    }
    fn c(&mut self) -> Result<C64> {
        Ok(C64::new(self.f()?, self.f()?))
    }
    fn u<T: std::str::FromStr>(&mut self) -> Result<T> {
        let t = self.tok("integer")?;
        t.parse().map_err(|_| self.err("integer"))
    }
    fn sum(&mut self) -> Result<RunningSum> {
        Ok(RunningSum {
            sum: self.f()?,
            count: self.u()?,
        })
    }
}

fn write_path(p: &PathState) -> String {
    let mut o = Out(vec!["path".into()]);
    let w = &p.walker;
    o.u(p.id);
    o.u(p.group);
    o.u(w.point.chart);
    o.c(w.point.u);
    o.c(w.point.v);
    o.u(w.steps);
    o.f(w.log_holonomy);
    o.c(w.normal_unit[0]);
    o.c(w.normal_unit[1]);
    match w.deep {
        None => o.u(0),
        Some(d) => {
            o.u(1);
            o.u(d.singularity);
            o.f(d.log_abs[0]);
            o.f(d.log_abs[1]);
            o.f(d.arg[0]);
            o.f(d.arg[1]);
        }
    }
    o.u(w.rng.get_stream());
    o.u(w.rng.get_word_pos());
    let f = &w.flags;
    for x in [
        f.box_entries,
        f.guard_trips,
        f.split_steps,
        f.retries,
        f.floor_redraws,
        f.deep_entries,
        f.deep_steps,
    ] {
        o.u(x);
    }
    let v = &w.visit;
    o.u(v.singularity.map_or(-1, |i| i as i64));
    o.u(v.entry_steps);
    o.f(v.entry_log);
    o.c(v.zeta);
    o.u(v.tripped as u8);
    let a = &p.acc;
    o.f(a.log_h_burn);
    for r in [
        &a.eta2,
        &a.eta2_half,
        &a.w,
        &a.w_half,
        &a.logstar,
        &a.logstar_half,
        &a.kappa,
    ] {
        o.sum(r);
    }
    o.u(a.kappa_failures);
    o.f(a.eta_max);
    for t in a.trust {
        o.u(t);
    }
    o.f(a.f1_ratio_max);
    o.f(a.window_log_h);
    o.sum(&a.window_logstar);
    match &p.aborted {
        None => o.u("-"),
        Some(m) => o.u(m.bytes().map(|b| format!("{b:02x}")).collect::<String>()),
    }
    o.0.join(" ")
}

fn read_path(r: &mut In, seed: u64) -> Result<PathState> {
    let id = r.u()?;
    let group = r.u()?;
    let chart: usize = r.u()?;
    if chart > 2 {
        return Err(r.err("chart"));
    }
    let point = ChartPoint::new(chart, r.c()?, r.c()?);
    let steps = r.u()?;
    let log_holonomy = r.f()?;
    let normal_unit = [r.c()?, r.c()?];
    let deep = match r.u::<u8>()? {
        0 => None,
        1 => Some(DeepCoords {
            singularity: r.u()?,
            log_abs: [r.f()?, r.f()?],
            arg: [r.f()?, r.f()?],
        }),
        _ => return Err(r.err("deep flag")),
    };
    let rng = StreamPos {
        seed,
        stream: r.u()?,
        word_pos: r.u()?,
    }
    .restore();
    let flags = WalkerFlags {
        box_entries: r.u()?,
        guard_trips: r.u()?,
        split_steps: r.u()?,
        retries: r.u()?,
        floor_redraws: r.u()?,
        deep_entries: r.u()?,
        deep_steps: r.u()?,
    };
    let sing: i64 = r.u()?;
    let visit = BoxVisit {
        singularity: usize::try_from(sing).ok(),
        entry_steps: r.u()?,
        entry_log: r.f()?,
        zeta: r.c()?,
        tripped: r.u::<u8>()? != 0,
    };
    let log_h_burn = r.f()?;
    let mut sums = [RunningSum::default(); 7];
    for s in sums.iter_mut() {
        *s = r.sum()?;
    }
    let kappa_failures = r.u()?;
    let eta_max = r.f()?;
    let mut trust = [0u64; TRUST_BINS];
    for t in trust.iter_mut() {
        *t = r.u()?;
    }
    let acc = PathAccum {
        log_h_burn,
        eta2: sums[0],
        eta2_half: sums[1],
        w: sums[2],
        w_half: sums[3],
        logstar: sums[4],
        logstar_half: sums[5],
        kappa: sums[6],
        kappa_failures,
        eta_max,
        trust,
        f1_ratio_max: r.f()?,
        window_log_h: r.f()?,
        window_logstar: r.sum()?,
    };
    let aborted = match r.tok("abort reason")? {
        "-" => None,
        h => {
            let bytes = (0..h.len() / 2)
                .map(|i| h.get(2 * i..2 * i + 2).and_then(|b| u8::from_str_radix(b, 16).ok()))
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| r.err("abort reason"))?;
            Some(String::from_utf8(bytes).map_err(|_| r.err("abort reason"))?)
        }
    };
    if r.toks.next().is_some() {
        return Err(r.err("path record (trailing fields)"));
    }
    Ok(PathState {
        id,
        group,
        walker: LeafWalkerState {
            point,
            steps,
            log_holonomy,
            normal_unit,
            deep,
            rng,
            flags,
            visit,
        },
        acc,
        aborted,
    })
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let cfg = serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut s = format!(
            "{MAGIC} {VERSION}\nconfig {cfg}\nstep {}\npaths {}\n",
            self.step,
            self.paths.len()
        );
        for p in &self.paths {
            s.push_str(&write_path(p));
            s.push('\n');
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, &str)> {
            let (i, l) = lines.next().ok_or_else(|| bad(format!("missing '{key}' record")))?;
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or((r.is_empty()).then_some(r)))
                .ok_or_else(|| bad(format!("line {}: expected '{key}'", i + 1)))?;
            Ok((i + 1, rest))
        };
        let (_, v) = next(MAGIC)?;
        if v.trim() != VERSION.to_string() {
            return Err(bad(format!("unsupported version '{}'", v.trim())));
        }
        let (_, cfg) = next("config")?;
        let config: RunConfig = serde_json::from_str(cfg).map_err(|e| bad(format!("config: {e}")))?;
        let (l, step) = next("step")?;
        let step = step.trim().parse().map_err(|_| bad(format!("line {l}: bad step")))?;
        let (l, n) = next("paths")?;
        let n: usize = n.trim().parse().map_err(|_| bad(format!("line {l}: bad path count")))?;
        let mut paths = Vec::with_capacity(n);
        for _ in 0..n {
            let (line, rest) = next("path")?;
            let mut r = In {
                toks: rest.split_whitespace(),
                line,
            };
            paths.push(read_path(&mut r, config.seed)?);
        }
        next("end")?;
        Ok(Self { config, step, paths })
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub const TRAJECTORY_HEADER: [&str; 8] = ["path", "t", "chart", "u_re", "u_im", "v_re", "v_im", "log_holonomy"];

/// Appends trajectory rows as CSV; writes the header first if `header` is set.
pub fn write_trajectory<W: Write>(out: W, rows: &[TrajectoryRow], header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    if header {
        w.write_record(TRAJECTORY_HEADER).map_err(io)?;
    }
    for (id, t, chart, u, v, lh) in rows {
        w.write_record([
            id.to_string(),
            format!("{t:e}"),
            chart.to_string(),
            format!("{:e}", u[0]),
            format!("{:e}", u[1]),
            format!("{:e}", v[0]),
            format!("{:e}", v[1]),
            format!("{lh:e}"),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
