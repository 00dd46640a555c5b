//! Safe training budget from available-memory samples: reclaim-adjusted
//! memory, an importance-weighted moving average over a window of sampling
//! periods, and the triggers that shrink the window.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_OOM_SCORE: u16 = 1000;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("no samples in the prediction window")]
    NoData,
    #[error("sample at {t_ms} ms is earlier than the previous one")]
    OutOfOrder { t_ms: u64 },
    #[error("oom score {0} is outside 0..=1000")]
    ScoreOutOfRange(u16),
    #[error("invalid predictor configuration: {0}")]
    InvalidConfig(String),
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapKind {
    DiskSwap,
    CompressedRam,
}

impl SwapKind {
    /// Watermark multiplier: compressed swap lives in DRAM and reclaims earlier.
    pub fn alpha(self) -> u64 {
        match self {
            SwapKind::DiskSwap => 1,
            SwapKind::CompressedRam => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcInfo {
    /// Kill priority, 0 (foreground) to 1000.
    pub score: u16,
    #[serde(rename = "fg")]
    pub foreground: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTraceSample {
    pub t_ms: u64,
    pub m_avail: u64,
    pub watermark_high: u64,
    pub swap_kind: SwapKind,
    pub procs: Vec<ProcInfo>,
}

/// One JSONL trace line; memory is in KiB on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRecord {
    t_ms: u64,
    m_avail_kb: u64,
    watermark_kb: u64,
    swap_kind: SwapKind,
    procs: Vec<ProcInfo>,
}

impl From<&MemoryTraceSample> for TraceRecord {
    fn from(s: &MemoryTraceSample) -> Self {
        Self {
            t_ms: s.t_ms,
            m_avail_kb: s.m_avail / 1024,
            watermark_kb: s.watermark_high / 1024,
            swap_kind: s.swap_kind,
            procs: s.procs.clone(),
        }
    }
}

impl From<TraceRecord> for MemoryTraceSample {
    fn from(r: TraceRecord) -> Self {
        Self { t_ms: r.t_ms, m_avail: r.m_avail_kb * 1024, watermark_high: r.watermark_kb * 1024, swap_kind: r.swap_kind, procs: r.procs }
    }
}

pub fn write_trace(samples: &[MemoryTraceSample], mut out: impl Write) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &TraceRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL trace, rejecting unordered timestamps and bad scores.
pub fn read_trace(input: impl BufRead) -> Result<Vec<MemoryTraceSample>, PredictorError> {
    let mut samples: Vec<MemoryTraceSample> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|source| PredictorError::Parse { line: i + 1, source })?;
        let sample = MemoryTraceSample::from(record);
        if let Some(p) = sample.procs.iter().find(|p| p.score > MAX_OOM_SCORE) {
            return Err(PredictorError::ScoreOutOfRange(p.score));
        }
        if samples.last().is_some_and(|prev| prev.t_ms > sample.t_ms) {
            return Err(PredictorError::OutOfOrder { t_ms: sample.t_ms });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Available memory minus the reclaim watermark, scaled by swap kind.
pub fn m_safe(sample: &MemoryTraceSample) -> u64 {
    sample.m_avail.saturating_sub(sample.swap_kind.alpha() * sample.watermark_high)
}

/// Sum of `MAX_OOM_SCORE / score` over the sample's processes, with score 0
/// counted as 1. An empty process list weighs 1.
pub fn window_weight(sample: &MemoryTraceSample) -> f64 {
    if sample.procs.is_empty() {
        return 1.0;
    }
    sample.procs.iter().map(|p| MAX_OOM_SCORE as f64 / p.score.max(1) as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Averaging window, initially one training epoch.
    pub window: Duration,
    /// Interval between emitted predictions.
    pub slide: Duration,
    /// Raw samples are averaged over periods of this length.
    pub sample_period: Duration,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { window: Duration::from_secs(60), slide: Duration::from_secs(5), sample_period: Duration::from_secs(1) }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.sample_period.is_zero() || self.slide.is_zero() {
            return Err(PredictorError::InvalidConfig("slide and sample period must be positive".into()));
        }
        if self.window < self.sample_period * 2 {
            return Err(PredictorError::InvalidConfig("window must hold at least two sample periods".into()));
        }
        Ok(())
    }
}

/// Averages of one closed sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodAverage {
    /// End of the period, exclusive.
    pub end_ms: u64,
    pub m_safe: f64,
    pub weight: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    period: u64,
    count: u64,
    m_safe: f64,
    weight: f64,
}

/// Single-writer moving-average state fed with time-ordered samples.
#[derive(Debug, Clone)]
pub struct BudgetPredictor {
    config: PredictorConfig,
    ring: VecDeque<PeriodAverage>,
    open: Option<Accumulator>,
    last_t: Option<u64>,
}

impl BudgetPredictor {
    pub fn new(config: PredictorConfig) -> Result<Self, PredictorError> {
        config.validate()?;
        Ok(Self { config, ring: VecDeque::new(), open: None, last_t: None })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn window(&self) -> Duration {
        self.config.window
    }

    fn period_ms(&self) -> u64 {
        self.config.sample_period.as_millis().max(1) as u64
    }

    fn close_open(&mut self) {
        if let Some(acc) = self.open.take() {
            let n = acc.count as f64;
            self.ring.push_back(PeriodAverage {
                end_ms: (acc.period + 1) * self.period_ms(),
                m_safe: acc.m_safe / n,
                weight: acc.weight / n,
            });
        }
    }

    pub fn observe(&mut self, sample: &MemoryTraceSample) -> Result<(), PredictorError> {
        if self.last_t.is_some_and(|t| t > sample.t_ms) {
            return Err(PredictorError::OutOfOrder { t_ms: sample.t_ms });
        }
        self.last_t = Some(sample.t_ms);
        let period = sample.t_ms / self.period_ms();
        if self.open.is_some_and(|a| a.period != period) {
            self.close_open();
        }
        let acc = self.open.get_or_insert(Accumulator { period, ..Accumulator::default() });
        acc.count += 1;
        acc.m_safe += m_safe(sample) as f64;
        acc.weight += window_weight(sample);
        Ok(())
    }

    /// Closed periods ending in `(now − W, now]`, oldest first. Periods that
    /// end at or before `now` are closed first.
    pub fn window_periods(&mut self, now_ms: u64) -> Vec<PeriodAverage> {
        if self.open.is_some_and(|a| (a.period + 1) * self.period_ms() <= now_ms) {
            self.close_open();
        }
        let w = self.config.window.as_millis() as u64;
        // Keep one full window behind `now`; older periods can never re-enter.
        while self.ring.front().is_some_and(|p| p.end_ms + w <= now_ms) {
            self.ring.pop_front();
        }
        self.ring.iter().filter(|p| p.end_ms <= now_ms && p.end_ms + w > now_ms).copied().collect()
    }

    /// Weighted mean of per-period safe memory over the window.
    pub fn predict(&mut self, now_ms: u64) -> Result<u64, PredictorError> {
        weighted_mean(&self.window_periods(now_ms)).map(|v| v.round() as u64)
    }

    /// Shrinks the window by `factor`, never below two sample periods.
    pub fn adjust_window(&mut self, factor: f64) {
        let floor = self.config.sample_period * 2;
        self.config.window = self.config.window.mul_f64(factor).max(floor);
    }
}

/// `Σ wᵢ·mᵢ / Σ wᵢ`.
pub fn weighted_mean(periods: &[PeriodAverage]) -> Result<f64, PredictorError> {
    let total: f64 = periods.iter().map(|p| p.weight).sum();
    if periods.is_empty() || total <= 0.0 {
        return Err(PredictorError::NoData);
    }
    let mean = periods.iter().map(|p| p.weight * p.m_safe).sum::<f64>() / total;
    // Clamp float drift so the result stays a convex combination.
    let (lo, hi) = periods.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.m_safe), hi.max(p.m_safe)));
    Ok(mean.clamp(lo, hi))
}

/// One emitted prediction alongside the latest period's raw safe memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub t_ms: u64,
    pub m_safe: u64,
    pub m_pred: u64,
}

/// Replays a trace, emitting a prediction every slide interval once the
/// window holds data.
pub fn predict_series(samples: &[MemoryTraceSample], config: PredictorConfig) -> Result<Vec<PredictionPoint>, PredictorError> {
    let mut predictor = BudgetPredictor::new(config)?;
    let slide = config.slide.as_millis().max(1) as u64;
    let mut out = Vec::new();
    let mut next = slide;
    let emit = |p: &mut BudgetPredictor, t: u64, out: &mut Vec<PredictionPoint>| {
        let periods = p.window_periods(t);
        if let (Some(last), Ok(pred)) = (periods.last(), weighted_mean(&periods)) {
            out.push(PredictionPoint { t_ms: t, m_safe: last.m_safe.round() as u64, m_pred: pred.round() as u64 });
        }
    };
    for s in samples {
        while s.t_ms >= next {
            emit(&mut predictor, next, &mut out);
            next += slide;
        }
        predictor.observe(s)?;
    }
    if let Some(last) = samples.last() {
        let t = last.t_ms + predictor.period_ms();
        emit(&mut predictor, t, &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegenConfig {
    /// Page-fault escalation factor over the previous average.
    pub tp1: f64,
    /// Low-memory kills tolerated per round.
    pub tp2: u32,
    /// Window shrink factor applied on a trigger.
    pub ws_adj: f64,
}

impl Default for RegenConfig {
    fn default() -> Self {
        Self { tp1: 2.0, tp2: 3, ws_adj: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundStats {
    pub page_faults: u64,
    pub lmk_kills: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegenReason {
    PageFaults,
    LowMemoryKills,
}

/// Whether the client must ask for a new plan; page faults are checked first.
pub fn should_regenerate(stats: &RoundStats, prev_avg_page_faults: f64, config: &RegenConfig) -> Option<RegenReason> {
    if stats.page_faults as f64 > config.tp1 * prev_avg_page_faults {
        Some(RegenReason::PageFaults)
    } else if stats.lmk_kills > config.tp2 {
        Some(RegenReason::LowMemoryKills)
    } else {
        None
    }
}

/// Shape of a synthetic phone-usage memory trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub duration: Duration,
    pub sample_interval: Duration,
    pub dram_bytes: u64,
    /// Available memory with only cached background apps.
    pub baseline_avail: u64,
    pub swap_kind: SwapKind,
    /// Watermark as a fraction of DRAM.
    pub watermark_fraction: f64,
    /// Mean interactive session length; lengths are lognormal.
    pub mean_session: Duration,
    /// Mean idle time between sessions; exponential. Zero runs sessions
    /// back to back.
    pub mean_idle: Duration,
    /// Mean time between app switches inside a session; exponential.
    pub mean_switch: Duration,
    /// Largest foreground-app footprint, as a fraction of the baseline.
    pub max_footprint: f64,
    /// Depth of a launch or switch spike, as a fraction of the baseline.
    pub spike_depth: f64,
    pub spike_duration: Duration,
    /// Measurement noise, standard deviation in bytes.
    pub noise: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        let gb = 1u64 << 30;
        Self {
            duration: Duration::from_secs(1800),
            sample_interval: Duration::from_millis(200),
            dram_bytes: 8 * gb,
            baseline_avail: 4 * gb,
            swap_kind: SwapKind::CompressedRam,
            watermark_fraction: 0.02,
            mean_session: Duration::from_secs(153),
            mean_idle: Duration::from_secs(60),
            mean_switch: Duration::from_secs(30),
            max_footprint: 0.2,
            spike_depth: 0.4,
            spike_duration: Duration::from_secs(3),
            noise: 20.0 * (1u64 << 20) as f64,
        }
    }
}

impl TraceSpec {
    /// A steady 4 GiB baseline broken only by launch and switch spikes.
    pub fn spike_fixture() -> Self {
        Self { mean_idle: Duration::ZERO, max_footprint: 0.0, ..Self::default() }
    }
}

/// Lognormal session lengths around the configured mean, one foreground app
/// with three to five cached background apps, and launch/switch spikes while
/// the launcher holds the top slot. Traces from one seed share their prefix
/// whatever the duration.
/// Score of the launcher process present during an app launch spike.
pub const LAUNCHER_SCORE: u16 = 600;

fn in_session(sample: &MemoryTraceSample) -> bool {
    sample.procs.iter().any(|p| p.foreground || p.score <= LAUNCHER_SCORE)
}

/// Lengths of the complete usage sessions in a trace: maximal runs of
/// samples with a foreground app or a launch in progress. Runs touching
/// either end of the trace are cut off and left out.
pub fn session_lengths(trace: &[MemoryTraceSample]) -> Vec<Duration> {
    let mut out = Vec::new();
    let mut start: Option<u64> = None;
    let mut seen_idle = false;
    for s in trace {
        match (in_session(s), start) {
            (true, None) if seen_idle => start = Some(s.t_ms),
            (false, Some(t0)) => {
                out.push(Duration::from_millis(s.t_ms - t0));
                start = None;
            }
            _ => {}
        }
        seen_idle |= !in_session(s);
    }
    out
}

pub fn generate_trace(spec: &TraceSpec, seed: u64) -> Vec<MemoryTraceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const SIGMA: f64 = 0.5;
    let mean_s = spec.mean_session.as_secs_f64().max(1.0);
    let session = LogNormal::new(mean_s.ln() - SIGMA * SIGMA / 2.0, SIGMA).expect("valid lognormal");
    let idle = (!spec.mean_idle.is_zero()).then(|| Exp::new(1.0 / spec.mean_idle.as_secs_f64()).expect("positive rate"));
    let switch = Exp::new(1.0 / spec.mean_switch.as_secs_f64().max(1.0)).expect("positive rate");
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid noise");
    let watermark = (spec.dram_bytes as f64 * spec.watermark_fraction) as u64;
    let step = spec.sample_interval.as_millis().max(1) as u64;
    let end = spec.duration.as_millis() as u64;
    let spike_ms = spec.spike_duration.as_millis() as u64;

    // Timeline of (start_ms, state) segments.
    #[derive(Clone, Copy)]
    enum Phase {
        Idle,
        Spike,
        Active,
    }
    let mut segments: Vec<(u64, Phase, u64)> = Vec::new();
    let mut t = 0u64;
    let mut in_session = idle.is_none() || rng.random::<bool>();
    while t < end {
        if in_session {
            let len = (session.sample(&mut rng) * 1e3) as u64;
            let session_end = t + len.max(spike_ms + step);
            let mut s = t;
            while s < session_end.min(end) {
                let footprint = rng.random::<f64>() * spec.max_footprint * spec.baseline_avail as f64;
                segments.push((s, Phase::Spike, 0));
                segments.push((s + spike_ms, Phase::Active, footprint as u64));
                s += spike_ms + (switch.sample(&mut rng) * 1e3) as u64 + step;
            }
            t = session_end;
        } else if let Some(idle) = &idle {
            segments.push((t, Phase::Idle, 0));
            t += (idle.sample(&mut rng) * 1e3) as u64 + step;
        }
        in_session = idle.is_none() || !in_session;
    }

    // Sampling draws come from a separate stream so a longer trace keeps
    // the same prefix.
    let mut srng = ChaCha8Rng::seed_from_u64(seed);
    srng.set_stream(1);
    let background = srng.random_range(3..=5);
    let mut samples = Vec::new();
    let mut seg = 0;
    let mut bg_scores: Vec<u16> = (0..background).map(|_| srng.random_range(700..=950)).collect();
    for t in (0..end).step_by(step as usize) {
        while seg + 1 < segments.len() && segments[seg + 1].0 <= t {
            seg += 1;
            if matches!(segments[seg].1, Phase::Spike) {
                bg_scores = (0..srng.random_range(3..=5)).map(|_| srng.random_range(700..=950)).collect();
            }
        }
        let (_, phase, footprint) = segments[seg];
        let base = spec.baseline_avail as f64;
        let mut procs: Vec<ProcInfo> = bg_scores.iter().map(|&score| ProcInfo { score, foreground: false }).collect();
        let avail = match phase {
            Phase::Idle => base,
            Phase::Spike => {
                procs.push(ProcInfo { score: LAUNCHER_SCORE, foreground: false });
                base * (1.0 - spec.spike_depth * srng.random_range(0.7..1.3))
            }
            Phase::Active => {
                procs.push(ProcInfo { score: 0, foreground: true });
                base - footprint as f64
            }
        };
        let m_avail = (avail + noise.sample(&mut srng)).clamp(0.0, spec.dram_bytes as f64) as u64;
        samples.push(MemoryTraceSample { t_ms: t, m_avail, watermark_high: watermark, swap_kind: spec.swap_kind, procs });
    }
    samples
}
