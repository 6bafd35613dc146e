//! Baseline vs factored generation timings.
//!
//! Each cell times producing the channel of every link over `F` frequency
//! points at one time instant. The factored score includes building the
//! spatial matrices. Everything timed runs on a one-thread pool.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::antenna::{make_ula, ArrayDescriptor, ArrayPattern, ElementPattern, PolarizedPattern};
use crate::engine::{channel_baseline, channel_grid, precompute_spatial, spatial_memory_bytes, ChannelGrid};
use crate::error::{Error, Result};
use crate::geometry::{LinkMultipath, Vec3};
use crate::linalg::{max_relative_difference, CMatrix};
use crate::params::{generate_links, PolarizationConfig, ScenarioConfig};
use crate::polarized::{polarized_baseline, polarized_grid, precompute_polarized, PolarizedChannel};
use crate::rng::substream;

/// Gate threshold on the max relative entrywise difference.
pub const GATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub tx_antenna_sweep: Vec<usize>,
    pub rx_antennas: usize,
    pub freq_point_sweep: Vec<usize>,
    pub links: usize,
    pub subpaths: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Subcarrier spacing, Hz. The grid is centered on `f0`.
    pub freq_spacing: f64,
    pub f0: f64,
    pub seed: u64,
    /// Shortest timed block; faster cells repeat the workload until it is
    /// reached.
    pub min_timed_seconds: f64,
    pub gate_samples: usize,
    pub polarized: bool,
    /// Lift the desk-scale cap below.
    pub full: bool,
    pub desk_max_tx: usize,
    pub desk_max_freqs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tx_antenna_sweep: vec![8, 16, 32, 64, 128, 256],
            rx_antennas: 4,
            freq_point_sweep: vec![12, 120, 1200],
            links: 10,
            subpaths: 240,
            repetitions: 3,
            warmup: 1,
            freq_spacing: 15e3,
            f0: 3e9,
            seed: 0,
            min_timed_seconds: 0.25,
            gate_samples: 5,
            polarized: false,
            full: false,
            desk_max_tx: 64,
            desk_max_freqs: 120,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: usize| {
            if v == 0 {
                Err(Error::invalid(name, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        if self.tx_antenna_sweep.is_empty() {
            return Err(Error::invalid("tx_antenna_sweep", "must be nonempty"));
        }
        if self.freq_point_sweep.is_empty() {
            return Err(Error::invalid("freq_point_sweep", "must be nonempty"));
        }
        for &s in &self.tx_antenna_sweep {
            positive("tx_antenna_sweep", s)?;
        }
        for &f in &self.freq_point_sweep {
            positive("freq_point_sweep", f)?;
        }
        positive("rx_antennas", self.rx_antennas)?;
        positive("links", self.links)?;
        positive("subpaths", self.subpaths)?;
        positive("gate_samples", self.gate_samples)?;
        if self.repetitions < 3 {
            return Err(Error::invalid("repetitions", "must be >= 3"));
        }
        if !(self.freq_spacing.is_finite() && self.freq_spacing > 0.0) {
            return Err(Error::invalid("freq_spacing", "must be > 0"));
        }
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(Error::invalid("f0", "must be > 0"));
        }
        if !(self.min_timed_seconds.is_finite() && self.min_timed_seconds >= 0.0) {
            return Err(Error::invalid("min_timed_seconds", "must be >= 0"));
        }
        Ok(())
    }

    /// Cells run under the current cap, in sweep order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &s in &self.tx_antenna_sweep {
            for &f in &self.freq_point_sweep {
                if self.full || (s <= self.desk_max_tx && f <= self.desk_max_freqs) {
                    out.push((s, f));
                }
            }
        }
        out
    }

    /// Scenario the bench links are drawn from.
    pub fn scenario(&self) -> ScenarioConfig {
        let (clusters, per_cluster) = if self.subpaths % 20 == 0 {
            (self.subpaths / 20, 20)
        } else {
            (1, self.subpaths)
        };
        ScenarioConfig {
            f0: self.f0,
            link_count: self.links,
            cluster_count: clusters,
            subpaths_per_cluster: per_cluster,
            polarization: self.polarized.then(PolarizationConfig::default),
            rng_seed: self.seed,
            ..ScenarioConfig::default()
        }
    }

    pub fn frequencies(&self, count: usize) -> Vec<f64> {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count).map(|k| self.f0 + (k as f64 - mid) * self.freq_spacing).collect()
    }

    /// Transmit and receive arrays for a cell with `tx` antennas.
    pub fn arrays(&self, tx: usize) -> Result<(ArrayDescriptor, ArrayDescriptor)> {
        let base = ElementPattern::sectorized(65.0, 65.0, 30.0);
        let pattern = if self.polarized {
            ArrayPattern::Polarized(PolarizedPattern::slanted(base, std::f64::consts::FRAC_PI_4)?)
        } else {
            ArrayPattern::Scalar(base)
        };
        let tx = make_ula(tx, 0.5, self.f0, Vec3::Y)?.with_pattern(pattern.clone())?;
        let rx = make_ula(self.rx_antennas, 0.5, self.f0, Vec3::Y)?.with_pattern(pattern)?;
        Ok((tx, rx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub tx_antennas: usize,
    pub freq_points: usize,
    pub links: usize,
    /// Median seconds for one pass over all links and frequencies.
    pub baseline_seconds: f64,
    pub optimized_seconds: f64,
    pub speedup: f64,
    pub spatial_memory_bytes: u64,
    pub baseline_inner: usize,
    pub optimized_inner: usize,
    pub gate_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEnvironment {
    pub cpu: String,
    pub build: String,
    pub threads: usize,
}

impl BenchEnvironment {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| std::env::consts::ARCH.to_string());
        let build = format!(
            "{} {}",
            if cfg!(debug_assertions) { "debug-assertions" } else { "release" },
            std::env::consts::ARCH
        );
        BenchEnvironment { cpu, build, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    /// Cells left out by the desk-scale cap.
    pub skipped: Vec<(usize, usize)>,
    pub environment: BenchEnvironment,
    pub polarized: bool,
}

impl BenchReport {
    pub fn cell(&self, tx: usize, freqs: usize) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.tx_antennas == tx && c.freq_points == freqs)
    }

    /// `(tx, f_lo, f_hi)` wherever speedup drops as frequency points grow.
    pub fn ordering_violations(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut txs: Vec<usize> = self.cells.iter().map(|c| c.tx_antennas).collect();
        txs.dedup();
        for tx in txs {
            let mut row: Vec<&BenchCell> = self.cells.iter().filter(|c| c.tx_antennas == tx).collect();
            row.sort_by_key(|c| c.freq_points);
            for w in row.windows(2) {
                if w[1].speedup < w[0].speedup {
                    out.push((tx, w[0].freq_points, w[1].freq_points));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "tx_antennas,freq_points,baseline_s,optimized_s,speedup,memory_bytes,links,baseline_inner,optimized_inner\n",
        );
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{},{},{},{}\n",
                c.tx_antennas,
                c.freq_points,
                c.baseline_seconds,
                c.optimized_seconds,
                c.speedup,
                c.spatial_memory_bytes,
                c.links,
                c.baseline_inner,
                c.optimized_inner
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateResult {
    pub max_relative_error: f64,
    pub samples: usize,
}

impl GateResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GATE_TOLERANCE
    }
}

/// Factored output of one link.
#[derive(Debug, Clone)]
pub enum GridOutput {
    Scalar(ChannelGrid),
    Polarized(Vec<PolarizedChannel>),
}

/// Inputs shared by the gate and the timed passes of one cell.
pub struct Workload<'a> {
    pub links: &'a [LinkMultipath],
    pub tx: &'a ArrayDescriptor,
    pub rx: &'a ArrayDescriptor,
    pub freqs: &'a [f64],
    pub t: f64,
    pub polarized: bool,
}

impl Workload<'_> {
    /// Baseline channels of every link and frequency.
    pub fn baseline_pass(&self) -> Result<Vec<CMatrix>> {
        let mut out = Vec::with_capacity(self.links.len() * self.freqs.len());
        for link in self.links {
            for &f in self.freqs {
                out.push(self.baseline_one(link, f)?);
            }
        }
        Ok(out)
    }

    /// Factored channels of every link and frequency, precompute included.
    /// Grids stay in their native layout.
    pub fn optimized_pass(&self) -> Result<Vec<GridOutput>> {
        self.links.iter().map(|link| self.optimized_grid(link)).collect()
    }

    fn optimized_grid(&self, link: &LinkMultipath) -> Result<GridOutput> {
        if self.polarized {
            let psp = precompute_polarized(link, self.tx, self.rx)?;
            Ok(GridOutput::Polarized(polarized_grid(&psp, self.freqs, &[self.t])?))
        } else {
            let sp = precompute_spatial(link, self.tx, self.rx)?;
            Ok(GridOutput::Scalar(channel_grid(&sp, self.freqs, &[self.t])?))
        }
    }

    fn baseline_one(&self, link: &LinkMultipath, f: f64) -> Result<CMatrix> {
        if self.polarized {
            polarized_baseline(link, self.tx, self.rx, f, self.t)
        } else {
            channel_baseline(link, self.tx, self.rx, f, self.t)
        }
    }

    fn optimized_link(&self, link: &LinkMultipath) -> Result<Vec<CMatrix>> {
        Ok(match self.optimized_grid(link)? {
            GridOutput::Scalar(g) => g.matrices(),
            GridOutput::Polarized(p) => p.iter().map(|c| c.sum()).collect(),
        })
    }
}

/// Compares baseline and factored channels on `samples` random
/// `(link, frequency)` cells.
pub fn verify_equivalence_gate(work: &Workload<'_>, samples: usize, seed: u64) -> Result<GateResult> {
    verify_equivalence_gate_with_fault(work, samples, seed, |_| {})
}

/// [`verify_equivalence_gate`] with `fault` applied to each factored result
/// before comparison. For negative-control tests.
#[doc(hidden)]
pub fn verify_equivalence_gate_with_fault(
    work: &Workload<'_>,
    samples: usize,
    seed: u64,
    fault: impl Fn(&mut CMatrix),
) -> Result<GateResult> {
    if samples == 0 {
        return Err(Error::invalid("gate_samples", "must be >= 1"));
    }
    let mut rng = substream(seed, u64::MAX);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let li = rng.random_range(0..work.links.len());
        let fi = rng.random_range(0..work.freqs.len());
        let link = &work.links[li];
        let mut got = work.optimized_link(link)?.swap_remove(fi);
        fault(&mut got);
        let reference = work.baseline_one(link, work.freqs[fi])?;
        let err = max_relative_difference(&got, &reference);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    Ok(GateResult {
        max_relative_error: worst,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub median_seconds: f64,
    pub inner: usize,
}

/// Runs `work` at least `warmup` times (at least once) and for at least
/// `min_seconds` in total, then returns how many calls fill one
/// `min_seconds` block.
fn warm_and_size<T>(warmup: usize, min_seconds: f64, work: &mut impl FnMut() -> Result<T>) -> Result<usize> {
    let begin = Instant::now();
    let mut calls = 0usize;
    let mut last;
    loop {
        let start = Instant::now();
        black_box(work()?);
        last = start.elapsed().as_secs_f64();
        calls += 1;
        if calls >= warmup.max(1) && begin.elapsed().as_secs_f64() >= min_seconds {
            break;
        }
    }
    Ok(if last >= min_seconds {
        1
    } else {
        ((min_seconds / last.max(1e-9)).ceil() as usize).max(1)
    })
}

fn timed_block<T>(inner: usize, work: &mut impl FnMut() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..inner {
        black_box(work()?);
    }
    Ok(start.elapsed().as_secs_f64() / inner as f64)
}

fn median(mut xs: Vec<f64>) -> Result<f64> {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs[xs.len() / 2];
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::Runtime {
            module: "bench",
            reason: "timer resolution too coarse for this cell".into(),
        })
    }
}

/// Median wall time per call of `work` over `repetitions` blocks of at least
/// `min_seconds` each.
pub fn time_median<T>(
    repetitions: usize,
    warmup: usize,
    min_seconds: f64,
    mut work: impl FnMut() -> Result<T>,
) -> Result<Timing> {
    let inner = warm_and_size(warmup, min_seconds, &mut work)?;
    let samples = (0..repetitions)
        .map(|_| timed_block(inner, &mut work))
        .collect::<Result<Vec<_>>>()?;
    Ok(Timing {
        median_seconds: median(samples)?,
        inner,
    })
}

/// Times several workloads with their blocks interleaved round-robin, so
/// slow drift of the machine hits all of them alike.
pub fn time_interleaved(
    repetitions: usize,
    warmup: usize,
    min_seconds: f64,
    jobs: &mut [&mut dyn FnMut() -> Result<()>],
) -> Result<Vec<Timing>> {
    let inner = jobs
        .iter_mut()
        .map(|job| warm_and_size(warmup, min_seconds, job))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = vec![Vec::with_capacity(repetitions); jobs.len()];
    for _ in 0..repetitions {
        for (k, job) in jobs.iter_mut().enumerate() {
            samples[k].push(timed_block(inner[k], job)?);
        }
    }
    samples
        .into_iter()
        .zip(inner)
        .map(|(xs, inner)| {
            Ok(Timing {
                median_seconds: median(xs)?,
                inner,
            })
        })
        .collect()
}

/// Keeps freed heap memory mapped for the rest of the process. Without it
/// glibc hands large freed blocks back to the kernel and every pass pays
/// first-touch page faults on its output buffers, a cost that grows with
/// the grid and blurs the comparison.
fn pin_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        use std::sync::Once;
        static ONCE: Once = Once::new();
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        });
    }
}

fn one_thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Runtime {
        module: "bench",
        reason: format!("cannot build single-thread pool: {e}"),
    })
}

/// Gate and time one `(tx, freq_points)` cell on the given links.
pub fn run_cell(cfg: &BenchConfig, links: &[LinkMultipath], tx_count: usize, freq_points: usize) -> Result<BenchCell> {
    Ok(run_row(cfg, links, tx_count, &[freq_points])?.remove(0))
}

/// Gate and time every frequency count for one antenna count. Blocks of all
/// cells in the row alternate within each repetition.
pub fn run_row(cfg: &BenchConfig, links: &[LinkMultipath], tx_count: usize, freq_points: &[usize]) -> Result<Vec<BenchCell>> {
    pin_allocator();
    let (tx, rx) = cfg.arrays(tx_count)?;
    let grids: Vec<Vec<f64>> = freq_points.iter().map(|&f| cfg.frequencies(f)).collect();
    let works: Vec<Workload<'_>> = grids
        .iter()
        .map(|freqs| Workload {
            links,
            tx: &tx,
            rx: &rx,
            freqs,
            t: 0.0,
            polarized: cfg.polarized,
        })
        .collect();
    let memory = spatial_memory_bytes(
        links.len() as u64,
        cfg.subpaths as u64,
        cfg.rx_antennas as u64,
        tx_count as u64,
        8,
    )?;
    one_thread_pool()?.install(|| {
        let mut gates = Vec::with_capacity(works.len());
        for (work, &fp) in works.iter().zip(freq_points) {
            let gate = verify_equivalence_gate(work, cfg.gate_samples, cfg.seed ^ ((tx_count as u64) << 32) ^ fp as u64)?;
            if !gate.passed() {
                return Err(Error::Runtime {
                    module: "bench",
                    reason: format!(
                        "equivalence gate failed on cell tx={tx_count} freqs={fp}: max relative error {:e}",
                        gate.max_relative_error
                    ),
                });
            }
            gates.push(gate);
        }
        let mut base: Vec<_> = works
            .iter()
            .map(|w| move || w.baseline_pass().map(|o| drop(black_box(o))))
            .collect();
        let mut opt: Vec<_> = works
            .iter()
            .map(|w| move || w.optimized_pass().map(|o| drop(black_box(o))))
            .collect();
        let mut jobs: Vec<&mut dyn FnMut() -> Result<()>> = Vec::with_capacity(2 * works.len());
        for (b, o) in base.iter_mut().zip(opt.iter_mut()) {
            jobs.push(b);
            jobs.push(o);
        }
        let timings = time_interleaved(cfg.repetitions, cfg.warmup, cfg.min_timed_seconds, &mut jobs)?;
        Ok(freq_points
            .iter()
            .zip(gates)
            .zip(timings.chunks_exact(2))
            .map(|((&fp, gate), t)| BenchCell {
                tx_antennas: tx_count,
                freq_points: fp,
                links: links.len(),
                baseline_seconds: t[0].median_seconds,
                optimized_seconds: t[1].median_seconds,
                speedup: t[0].median_seconds / t[1].median_seconds,
                spatial_memory_bytes: if cfg.polarized { 2 * memory } else { memory },
                baseline_inner: t[0].inner,
                optimized_inner: t[1].inner,
                gate_error: gate.max_relative_error,
            })
            .collect())
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let links = generate_links(&cfg.scenario())?;
    let run = cfg.cells();
    let skipped = cfg
        .tx_antenna_sweep
        .iter()
        .flat_map(|&s| cfg.freq_point_sweep.iter().map(move |&f| (s, f)))
        .filter(|c| !run.contains(c))
        .collect();
    let mut cells = Vec::with_capacity(run.len());
    for &tx in &cfg.tx_antenna_sweep {
        let row: Vec<usize> = run.iter().filter(|c| c.0 == tx).map(|c| c.1).collect();
        if !row.is_empty() && !cells.iter().any(|c: &BenchCell| c.tx_antennas == tx) {
            cells.extend(run_row(cfg, &links, tx, &row)?);
        }
    }
    Ok(BenchReport {
        cells,
        skipped,
        environment: BenchEnvironment::detect(),
        polarized: cfg.polarized,
    })
}
