//! Labelled scenario corpora and the `BSP1` record format.
//!
//! All numbers are little-endian. The header is the magic `BSP1` followed by
//! `version`, `record_count`, `n1` and `n2` as `u32`. Each record holds
//!
//! * `chi2`, `alpha` as `f64`
//! * start `x, y, p11, p12, p22` as `f64`
//! * target `cx, cy, radius` as `f64`
//! * obstacle count as `u32`, then per obstacle a tag byte (`0` triangle with
//!   six `f64` vertex coordinates, `1` circle with `cx, cy, r`)
//! * channels `O`, `T`, `I`, `L`, each `n1 · n2` `f32` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{belief_collision_free, check_feasibility, in_target, BeliefState, Covariance2, TargetRegion};
use crate::encoding::{encode_label, encode_obstacles, encode_start, encode_target, Grid, GridStack};
use crate::error::{Error, Result};
use crate::geometry::{sample_obstacles, Bounds, Obstacle, Point2};
use crate::planner::{plan, PlannerParams, PlannerStatus};

pub const MAGIC: &[u8; 4] = b"BSP1";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;
const MAX_DRAWS: usize = 1000;

/// One instance of the planning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub obstacles: Vec<Obstacle>,
    pub start: BeliefState,
    pub target: TargetRegion,
    pub chi2: f64,
    pub alpha: f64,
}

impl Scenario {
    /// Input channels `O`, `T`, `I` at `n1 × n2`.
    pub fn encode(&self, n1: usize, n2: usize) -> GridStack {
        GridStack {
            obstacles: encode_obstacles(&self.obstacles, n1, n2),
            target: encode_target(&self.target, n1, n2),
            start: encode_start(self.start.x, n1, n2),
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub n1: usize,
    pub n2: usize,
    pub seed_base: u64,
    pub obstacle_count: usize,
    pub bounds: Bounds,
    pub target: TargetRegion,
    /// Initial covariance `P0` of every start belief.
    pub start_cov: Covariance2,
    pub chi2: f64,
    pub alpha: f64,
    pub planner: PlannerParams,
    pub workers: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 512,
            n1: 64,
            n2: 64,
            seed_base: 0,
            obstacle_count: 5,
            bounds: Bounds::UNIT,
            target: TargetRegion { center: Point2::new(0.8, 0.8), radius: 0.05 },
            start_cov: Covariance2 { p11: 9e-4, p12: 0.0, p22: 9e-4 },
            chi2: crate::belief::DEFAULT_CHI2,
            alpha: 0.1,
            planner: PlannerParams::default(),
            workers: 1,
        }
    }
}

/// Random obstacles around a fixed target with a random collision-free start.
///
/// Obstacle sets that come within the target radius of the target centre are
/// redrawn, as are starts that collide or already lie in the target.
pub fn generate_scenario<R: Rng + ?Sized>(rng: &mut R, config: &DatasetConfig) -> Result<Scenario> {
    let target = config.target;
    let mut obstacles = None;
    for _ in 0..MAX_DRAWS {
        let obs = sample_obstacles(rng, config.obstacle_count, &config.bounds);
        if obs.iter().all(|o| o.min_distance(target.center) >= target.radius) {
            obstacles = Some(obs);
            break;
        }
    }
    let obstacles = obstacles.ok_or(Error::UnsatisfiableScenario { attempts: MAX_DRAWS })?;
    for _ in 0..MAX_DRAWS {
        let start = BeliefState { x: config.bounds.sample(rng), cov: config.start_cov };
        if !in_target(&start, &target) && belief_collision_free(&start, &obstacles, config.chi2)? {
            return Ok(Scenario { obstacles, start, target, chi2: config.chi2, alpha: config.alpha });
        }
    }
    Err(Error::UnsatisfiableScenario { attempts: MAX_DRAWS })
}

/// Scenario for record `index`, seeded by `seed_base + index`.
pub fn scenario_for_index(config: &DatasetConfig, index: usize) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed_base.wrapping_add(index as u64));
    generate_scenario(&mut rng, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub scenario: Scenario,
    pub grids: GridStack,
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub requested: usize,
    pub written: usize,
    pub failures: usize,
    pub wall_time: Duration,
}

/// Plans and labels record `index`; `None` if the planner found no feasible path.
pub fn label_scenario(config: &DatasetConfig, index: usize) -> Result<Option<Record>> {
    let scenario = scenario_for_index(config, index)?;
    let params = PlannerParams { seed: config.seed_base.wrapping_add(index as u64), ..config.planner.clone() };
    let res = plan(&scenario, &params)?;
    let Some(path) = res.path.filter(|_| res.status == PlannerStatus::Solved) else {
        return Ok(None);
    };
    let report = check_feasibility(&path, &scenario.start, &scenario.target, &scenario.obstacles, scenario.chi2, 2)?;
    if !report.ok() {
        return Ok(None);
    }
    let mut grids = scenario.encode(config.n1, config.n2);
    grids.label = Some(encode_label(&path, scenario.chi2, config.n1, config.n2)?);
    Ok(Some(Record { scenario, grids }))
}

/// Generates `config.count` scenarios, labels them with the planner and
/// writes the solved ones in index order.
pub fn build_dataset(config: &DatasetConfig, out_path: impl AsRef<Path>) -> Result<BuildSummary> {
    let t0 = Instant::now();
    let mut writer = RecordWriter::create(out_path, config.n1, config.n2)?;
    let workers = config.workers.max(1);
    let mut failures = 0;
    // chunks keep memory bounded while workers run ahead
    let chunk = 64 * workers;
    let mut begin = 0;
    while begin < config.count {
        let end = (begin + chunk).min(config.count);
        let mut results: Vec<Option<Result<Option<Record>>>> = (begin..end).map(|_| None).collect();
        let per = (end - begin).div_ceil(workers);
        std::thread::scope(|s| {
            for (w, slot) in results.chunks_mut(per).enumerate() {
                let first = begin + w * per;
                s.spawn(move || {
                    for (k, r) in slot.iter_mut().enumerate() {
                        *r = Some(label_scenario(config, first + k));
                    }
                });
            }
        });
        for r in results {
            match r.expect("every slot is filled")? {
                Some(rec) => writer.append(&rec)?,
                None => failures += 1,
            }
        }
        begin = end;
    }
    let written = writer.finish()?;
    Ok(BuildSummary { requested: config.count, written, failures, wall_time: t0.elapsed() })
}

pub struct RecordWriter {
    out: BufWriter<File>,
    n1: usize,
    n2: usize,
    count: u32,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, n1: usize, n2: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, 0, n1, n2)?;
        Ok(RecordWriter { out, n1, n2, count: 0 })
    }

    pub fn append(&mut self, rec: &Record) -> Result<()> {
        let s = &rec.scenario;
        let g = &rec.grids;
        let label = g.label.as_ref().ok_or_else(|| Error::InvalidParameter("record needs a label".into()))?;
        g.validate()?;
        if g.dims() != (self.n1, self.n2) {
            return Err(Error::ShapeMismatch(format!("record is {:?}, file is {}x{}", g.dims(), self.n1, self.n2)));
        }
        let w = &mut self.out;
        let c = &s.start.cov;
        for v in [s.chi2, s.alpha, s.start.x.x, s.start.x.y, c.p11, c.p12, c.p22] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [s.target.center.x, s.target.center.y, s.target.radius] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(s.obstacles.len() as u32).to_le_bytes())?;
        for o in &s.obstacles {
            match *o {
                Obstacle::Triangle(v) => {
                    w.write_all(&[0])?;
                    for p in v {
                        w.write_all(&p.x.to_le_bytes())?;
                        w.write_all(&p.y.to_le_bytes())?;
                    }
                }
                Obstacle::Circle { center, radius } => {
                    w.write_all(&[1])?;
                    for v in [center.x, center.y, radius] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        for grid in [&g.obstacles, &g.target, &g.start, label] {
            for v in &grid.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Patches the record count into the header and flushes.
    pub fn finish(mut self) -> Result<usize> {
        self.out.flush()?;
        let mut f = self.out.into_inner().map_err(|e| e.into_error())?;
        f.seek(SeekFrom::Start(0))?;
        write_header(&mut f, self.count, self.n1, self.n2)?;
        f.flush()?;
        Ok(self.count as usize)
    }
}

fn write_header(w: &mut impl Write, count: u32, n1: usize, n2: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, count, n1 as u32, n2 as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_records(path: impl AsRef<Path>, n1: usize, n2: usize, records: &[Record]) -> Result<()> {
    let mut w = RecordWriter::create(path, n1, n2)?;
    for r in records {
        w.append(r)?;
    }
    w.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub record_count: u32,
    pub n1: u32,
    pub n2: u32,
}

/// Streaming reader; the header is validated on open.
pub struct RecordReader<R> {
    input: R,
    pub header: DatasetHeader,
    index: usize,
    failed: bool,
}

/// Opens a `BSP1` file.
pub fn read_records(path: impl AsRef<Path>) -> Result<RecordReader<BufReader<File>>> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    let reader = RecordReader::new(BufReader::new(f))?;
    if reader.header.record_count > 0 && len <= HEADER_LEN {
        return Err(Error::TruncatedRecord { index: 0 });
    }
    Ok(reader)
}

pub fn read_all(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<Record>)> {
    let reader = read_records(path)?;
    let header = reader.header;
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| Error::Format("file too short for a header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut vals = [0u32; 4];
        for v in vals.iter_mut() {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| Error::Format("file too short for a header".into()))?;
            *v = u32::from_le_bytes(b);
        }
        let header = DatasetHeader { version: vals[0], record_count: vals[1], n1: vals[2], n2: vals[3] };
        if header.version != VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        if header.n1 < 2 || header.n2 < 2 {
            return Err(Error::Format(format!("grid {}x{} too small", header.n1, header.n2)));
        }
        Ok(RecordReader { input, header, index: 0, failed: false })
    }

    fn read_record(&mut self) -> Result<Record> {
        let index = self.index;
        let trunc = |_| Error::TruncatedRecord { index };
        let input = &mut self.input;
        let mut f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 8 * n];
            input.read_exact(&mut buf).map_err(trunc)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let head = f64s(10)?;
        let mut b4 = [0u8; 4];
        self.input.read_exact(&mut b4).map_err(trunc)?;
        let n_obs = u32::from_le_bytes(b4) as usize;
        let mut obstacles = Vec::with_capacity(n_obs.min(1024));
        for _ in 0..n_obs {
            let mut tag = [0u8; 1];
            self.input.read_exact(&mut tag).map_err(trunc)?;
            let n = match tag[0] {
                0 => 6,
                1 => 3,
                t => return Err(Error::Format(format!("record {index}: unknown obstacle tag {t}"))),
            };
            let mut buf = vec![0u8; 8 * n];
            self.input.read_exact(&mut buf).map_err(trunc)?;
            let v: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            obstacles.push(if n == 6 {
                Obstacle::triangle(Point2::new(v[0], v[1]), Point2::new(v[2], v[3]), Point2::new(v[4], v[5]))?
            } else {
                Obstacle::circle(Point2::new(v[0], v[1]), v[2])?
            });
        }
        let (n1, n2) = (self.header.n1 as usize, self.header.n2 as usize);
        let mut channels = Vec::with_capacity(4);
        for _ in 0..4 {
            let mut buf = vec![0u8; 4 * n1 * n2];
            self.input.read_exact(&mut buf).map_err(trunc)?;
            let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            channels.push(Grid::from_values(n1, n2, values)?);
        }
        let label = channels.pop();
        let start_g = channels.pop().unwrap();
        let target_g = channels.pop().unwrap();
        let obstacles_g = channels.pop().unwrap();
        let scenario = Scenario {
            obstacles,
            start: BeliefState::new(Point2::new(head[2], head[3]), Covariance2::new(head[4], head[5], head[6])?)?,
            target: TargetRegion::new(Point2::new(head[7], head[8]), head[9])?,
            chi2: head[0],
            alpha: head[1],
        };
        Ok(Record {
            scenario,
            grids: GridStack { obstacles: obstacles_g, target: target_g, start: start_g, label },
        })
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.index >= self.header.record_count as usize {
            // anything after the last record means the count is wrong
            let mut extra = [0u8; 1];
            return match self.input.read(&mut extra) {
                Ok(0) => None,
                Ok(_) => {
                    self.failed = true;
                    Some(Err(Error::Format("trailing bytes after the last record".into())))
                }
                Err(e) => {
                    self.failed = true;
                    Some(Err(e.into()))
                }
            };
        }
        let r = self.read_record();
        self.failed = r.is_err();
        self.index += 1;
        Some(r)
    }
}
