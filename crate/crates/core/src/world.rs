//! Deterministic kinematic tabletop simulator for blocks and bowls.
//!
//! The world is purely kinematic: placements settle instantly according to
//! a fixed support model (bowl containment, offset-threshold stacking, or
//! table rest). All randomness flows through a scene-local seeded generator,
//! so identical `(config, seed, call sequence)` always reproduces the same
//! final state bit for bit. Stochastic execution failures ("drops") for
//! error-recovery tasks are injected here as well.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Block edge length in meters (also the per-level stack height).
pub const BLOCK_EDGE: f64 = 0.05;
/// Half of [`BLOCK_EDGE`]; the rest height of a block on the table.
pub const BLOCK_HALF_EDGE: f64 = 0.025;
/// Bowl radius in meters; placements within this of a bowl center land inside it.
pub const BOWL_RADIUS: f64 = 0.05;
/// Rest height of an object sitting inside a bowl.
pub const BOWL_INTERIOR_Z: f64 = 0.01;
/// Minimum center separation for objects resting side by side on the table.
pub const FOOTPRINT_SEPARATION: f64 = 0.06;

/// A point or displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean norm of `self - other`.
    pub fn distance(&self, other: &Vec3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Horizontal (x, y) distance, ignoring z.
    pub fn horizontal_distance(&self, other: &Vec3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

/// Euclidean distance between two points (free-function form of [`Vec3::distance`]).
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    a.distance(b)
}

/// The eight palette colors; scenes draw pair colors from these without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    Pink,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Orange,
        Color::Purple,
        Color::Pink,
        Color::Cyan,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Pink => "pink",
            Color::Cyan => "cyan",
        }
    }

    pub fn parse(name: &str) -> Option<Color> {
        Color::ALL.iter().copied().find(|c| c.name() == name)
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Block,
    Bowl,
}

impl ObjectKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectKind::Block => "block",
            ObjectKind::Bowl => "bowl",
        }
    }

    /// Rest height of this kind's center when sitting directly on the table.
    pub fn table_rest_z(&self) -> f64 {
        match self {
            ObjectKind::Block => BLOCK_HALF_EDGE,
            ObjectKind::Bowl => 0.0,
        }
    }
}

/// Opaque per-scene object identifier, e.g. `blk_red` or `bowl_cyan`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn for_object(kind: ObjectKind, color: Color) -> Self {
        let prefix = match kind {
            ObjectKind::Block => "blk",
            ObjectKind::Bowl => "bowl",
        };
        Self(format!("{prefix}_{}", color.name()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What an object rests on. `Held` marks the (transient) in-gripper state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Support {
    Table,
    Held,
    Object(ObjectId),
}

impl From<Support> for String {
    fn from(s: Support) -> String {
        match s {
            Support::Table => "table".to_string(),
            Support::Held => "held".to_string(),
            Support::Object(id) => id.0,
        }
    }
}

impl TryFrom<String> for Support {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "table" => Ok(Support::Table),
            "held" => Ok(Support::Held),
            _ => Ok(Support::Object(ObjectId(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Color,
    pub pose: Vec3,
    pub supported_by: Support,
}

/// Axis-aligned workspace rectangle on the table plane (z = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn clip(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }
}

/// Stochastic execution-failure model for error-recovery tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureProfile {
    /// Probability that a place action drops its object short of the target.
    pub drop_probability: f64,
    /// Standard deviation of the 2D Gaussian scatter applied to a dropped object.
    pub drop_scatter_sigma: f64,
}

impl Default for FailureProfile {
    fn default() -> Self {
        Self { drop_probability: 0.0, drop_scatter_sigma: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub workspace: Rect,
    /// Max horizontal offset at which a block still stacks instead of toppling.
    pub stability_offset: f64,
    /// Minimum pairwise center distance between spawned objects.
    pub spawn_min_separation: f64,
    pub failure: FailureProfile,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            workspace: Rect { min_x: -0.25, max_x: 0.25, min_y: -0.25, max_y: 0.25 },
            stability_offset: 0.015,
            spawn_min_separation: 0.12,
            failure: FailureProfile::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.stability_offset >= BLOCK_HALF_EDGE {
            return Err(WorldError::BadConfig {
                detail: format!(
                    "stability_offset {} must be below the block half-edge {}",
                    self.stability_offset, BLOCK_HALF_EDGE
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.failure.drop_probability) {
            return Err(WorldError::BadConfig {
                detail: format!("drop_probability {} outside [0, 1]", self.failure.drop_probability),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Color,
    pub pose: Vec3,
}

/// Symbolic camera snapshot: one descriptor per scene object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub entries: Vec<ObservedObject>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum WorldError {
    #[error("workspace too crowded: gave up after {attempts} placement attempts")]
    WorkspaceTooCrowded { attempts: u32 },
    #[error("already holding {held}")]
    AlreadyHolding { held: ObjectId },
    #[error("object {id} is buried: {blocker} rests on it")]
    ObjectBuried { id: ObjectId, blocker: ObjectId },
    #[error("unknown object {id}")]
    UnknownObject { id: ObjectId },
    #[error("nothing held")]
    NothingHeld,
    #[error("target out of workspace: ({x:.3}, {y:.3})")]
    OutOfWorkspace { x: f64, y: f64 },
    #[error("pair count {n} outside [2, 4]")]
    InvalidPairCount { n: usize },
    #[error("invalid world config: {detail}")]
    BadConfig { detail: String },
    #[error("invalid scene snapshot: {detail}")]
    BadSnapshot { detail: String },
}

/// Result of resolving where a placement settles.
#[derive(Debug, Clone, PartialEq)]
pub struct Settled {
    pub support: Support,
    pub pose: Vec3,
}

/// Result of a completed place action.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceResult {
    pub object: ObjectId,
    pub achieved: Vec3,
    pub support: Support,
    pub dropped: bool,
}

/// Ground-truth world state for one trial.
///
/// Owned by exactly one execution context; every random draw comes from the
/// embedded generator, seeded at spawn time.
#[derive(Debug, Clone)]
pub struct SceneState {
    objects: Vec<RigidObject>,
    held: Option<ObjectId>,
    rng: ChaCha8Rng,
    seed: u64,
    step_counter: u64,
}

/// JSON wire form of a scene: `objects` (id, kind, color, pose, supported_by),
/// `held`, and the spawn `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub objects: Vec<ObjectSnapshot>,
    pub held: Option<ObjectId>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub color: Color,
    pub pose: [f64; 3],
    pub supported_by: Support,
}

const MAX_SPAWN_ATTEMPTS: u32 = 10_000;
const MAX_SCATTER_ATTEMPTS: u32 = 100;
/// Margin kept between spawned object centers and the workspace edge.
const SPAWN_EDGE_MARGIN: f64 = 0.05;

/// Spawns `n_pairs` color-matched block/bowl pairs at rejection-sampled poses.
///
/// Colors are drawn without replacement from the 8-color palette; all pairwise
/// center distances respect `config.spawn_min_separation`. Identical
/// `(config, n_pairs, seed)` yields an identical scene.
pub fn spawn_scene(config: &WorldConfig, n_pairs: usize, seed: u64) -> Result<SceneState, WorldError> {
    config.validate()?;
    if !(2..=4).contains(&n_pairs) {
        return Err(WorldError::InvalidPairCount { n: n_pairs });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut colors = Color::ALL.to_vec();
    colors.shuffle(&mut rng);
    colors.truncate(n_pairs);

    let ws = &config.workspace;
    let (lo_x, hi_x) = (ws.min_x + SPAWN_EDGE_MARGIN, ws.max_x - SPAWN_EDGE_MARGIN);
    let (lo_y, hi_y) = (ws.min_y + SPAWN_EDGE_MARGIN, ws.max_y - SPAWN_EDGE_MARGIN);

    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(2 * n_pairs);
    let mut attempts = 0u32;
    for _ in 0..2 * n_pairs {
        loop {
            attempts += 1;
            if attempts > MAX_SPAWN_ATTEMPTS {
                return Err(WorldError::WorkspaceTooCrowded { attempts: MAX_SPAWN_ATTEMPTS });
            }
            let x = rng.gen_range(lo_x..hi_x);
            let y = rng.gen_range(lo_y..hi_y);
            let clear = placed.iter().all(|&(px, py)| {
                let (dx, dy) = (x - px, y - py);
                (dx * dx + dy * dy).sqrt() >= config.spawn_min_separation
            });
            if clear {
                placed.push((x, y));
                break;
            }
        }
    }

    let mut objects = Vec::with_capacity(2 * n_pairs);
    for (i, color) in colors.iter().enumerate() {
        let (bx, by) = placed[2 * i];
        objects.push(RigidObject {
            id: ObjectId::for_object(ObjectKind::Block, *color),
            kind: ObjectKind::Block,
            color: *color,
            pose: Vec3::new(bx, by, ObjectKind::Block.table_rest_z()),
            supported_by: Support::Table,
        });
        let (wx, wy) = placed[2 * i + 1];
        objects.push(RigidObject {
            id: ObjectId::for_object(ObjectKind::Bowl, *color),
            kind: ObjectKind::Bowl,
            color: *color,
            pose: Vec3::new(wx, wy, ObjectKind::Bowl.table_rest_z()),
            supported_by: Support::Table,
        });
    }

    Ok(SceneState { objects, held: None, rng, seed, step_counter: 0 })
}

impl SceneState {
    pub fn objects(&self) -> &[RigidObject] {
        &self.objects
    }

    pub fn object(&self, id: &ObjectId) -> Option<&RigidObject> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn held(&self) -> Option<&ObjectId> {
        self.held.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    /// Returns one descriptor per object. With `noise_sigma > 0`, poses carry
    /// zero-mean Gaussian noise drawn from the scene generator; with zero
    /// sigma the generator is untouched and poses are exact.
    pub fn observe(&mut self, noise_sigma: f64) -> Observation {
        let noise = if noise_sigma > 0.0 {
            Some(Normal::new(0.0, noise_sigma).expect("finite sigma"))
        } else {
            None
        };
        let mut entries = Vec::with_capacity(self.objects.len());
        for obj in &self.objects {
            let pose = match &noise {
                Some(n) => Vec3::new(
                    obj.pose.x + n.sample(&mut self.rng),
                    obj.pose.y + n.sample(&mut self.rng),
                    obj.pose.z + n.sample(&mut self.rng),
                ),
                None => obj.pose,
            };
            entries.push(ObservedObject { id: obj.id.clone(), kind: obj.kind, color: obj.color, pose });
        }
        Observation { entries, timestamp: self.step_counter }
    }

    /// Grasps `id`, detaching it from its support.
    pub fn step_pick(&mut self, id: &ObjectId) -> Result<(), WorldError> {
        if let Some(held) = &self.held {
            return Err(WorldError::AlreadyHolding { held: held.clone() });
        }
        if self.object(id).is_none() {
            return Err(WorldError::UnknownObject { id: id.clone() });
        }
        if let Some(blocker) = self
            .objects
            .iter()
            .find(|o| o.supported_by == Support::Object(id.clone()))
        {
            return Err(WorldError::ObjectBuried { id: id.clone(), blocker: blocker.id.clone() });
        }
        let obj = self.objects.iter_mut().find(|o| &o.id == id).expect("checked above");
        obj.supported_by = Support::Held;
        self.held = Some(id.clone());
        Ok(())
    }

    /// Releases the held object at `target`.
    ///
    /// With probability `1 - drop_probability` the object settles at the
    /// target per the support rules; otherwise it drops onto the table at the
    /// target plus 2D Gaussian scatter, re-sampled (bounded) until the landing
    /// spot keeps [`FOOTPRINT_SEPARATION`] from every other object and clipped
    /// to the workspace.
    pub fn step_place(&mut self, config: &WorldConfig, target: Vec3) -> Result<PlaceResult, WorldError> {
        let held_id = self.held.clone().ok_or(WorldError::NothingHeld)?;
        if !config.workspace.contains(target.x, target.y) {
            return Err(WorldError::OutOfWorkspace { x: target.x, y: target.y });
        }
        let kind = self.object(&held_id).expect("held object exists").kind;

        let p = config.failure.drop_probability;
        let dropped = p > 0.0 && self.rng.gen::<f64>() < p;

        let settled = if dropped {
            let normal = Normal::new(0.0, config.failure.drop_scatter_sigma).expect("finite sigma");
            let mut landing = (target.x, target.y);
            for _ in 0..MAX_SCATTER_ATTEMPTS {
                let dx: f64 = normal.sample(&mut self.rng);
                let dy: f64 = normal.sample(&mut self.rng);
                landing = config.workspace.clip(target.x + dx, target.y + dy);
                let clear = self.objects.iter().filter(|o| o.id != held_id).all(|o| {
                    let (ex, ey) = (landing.0 - o.pose.x, landing.1 - o.pose.y);
                    (ex * ex + ey * ey).sqrt() >= FOOTPRINT_SEPARATION
                });
                if clear {
                    break;
                }
            }
            Settled {
                support: Support::Table,
                pose: Vec3::new(landing.0, landing.1, kind.table_rest_z()),
            }
        } else {
            self.settle(config, target, kind)
        };

        let obj = self.objects.iter_mut().find(|o| o.id == held_id).expect("held object exists");
        obj.pose = settled.pose;
        obj.supported_by = settled.support.clone();
        self.held = None;
        self.step_counter += 1;
        Ok(PlaceResult { object: held_id, achieved: settled.pose, support: settled.support, dropped })
    }

    /// Support resolution for a block placed at `pose` (the common case).
    ///
    /// Within [`BOWL_RADIUS`] of a bowl center the object lands inside that
    /// bowl at [`BOWL_INTERIOR_Z`]; within `stability_offset` of a block it
    /// stacks on the tallest such block; otherwise it rests on the table.
    /// The placed object keeps the requested (x, y); only z is settled.
    pub fn resolve_support(&self, config: &WorldConfig, pose: Vec3) -> Settled {
        self.settle(config, pose, ObjectKind::Block)
    }

    fn settle(&self, config: &WorldConfig, pose: Vec3, kind: ObjectKind) -> Settled {
        let candidates = || self.objects.iter().filter(|o| o.supported_by != Support::Held);

        let mut best_bowl: Option<(&RigidObject, f64)> = None;
        for bowl in candidates().filter(|o| o.kind == ObjectKind::Bowl) {
            let d = bowl.pose.horizontal_distance(&pose);
            if d <= BOWL_RADIUS && best_bowl.map_or(true, |(_, bd)| d < bd) {
                best_bowl = Some((bowl, d));
            }
        }
        if let Some((bowl, _)) = best_bowl {
            return Settled {
                support: Support::Object(bowl.id.clone()),
                pose: Vec3::new(pose.x, pose.y, BOWL_INTERIOR_Z),
            };
        }

        let mut best_block: Option<&RigidObject> = None;
        for block in candidates().filter(|o| o.kind == ObjectKind::Block) {
            if block.pose.horizontal_distance(&pose) <= config.stability_offset
                && best_block.map_or(true, |b| block.pose.z > b.pose.z)
            {
                best_block = Some(block);
            }
        }
        if let Some(block) = best_block {
            return Settled {
                support: Support::Object(block.id.clone()),
                pose: Vec3::new(pose.x, pose.y, block.pose.z + BLOCK_EDGE),
            };
        }

        Settled { support: Support::Table, pose: Vec3::new(pose.x, pose.y, kind.table_rest_z()) }
    }

    /// Reverts a pick whose place half could not run, restoring the previous
    /// support. The pose was never touched by the pick.
    pub(crate) fn abort_pick(&mut self, id: &ObjectId, prev_support: Support) {
        if self.held.as_ref() == Some(id) {
            if let Some(obj) = self.objects.iter_mut().find(|o| &o.id == id) {
                obj.supported_by = prev_support;
            }
            self.held = None;
        }
    }

    pub fn snapshot(&self) -> SceneSnapshot {
        SceneSnapshot {
            objects: self
                .objects
                .iter()
                .map(|o| ObjectSnapshot {
                    id: o.id.clone(),
                    kind: o.kind,
                    color: o.color,
                    pose: [o.pose.x, o.pose.y, o.pose.z],
                    supported_by: o.supported_by.clone(),
                })
                .collect(),
            held: self.held.clone(),
            seed: self.seed,
        }
    }

    /// Rebuilds a scene from its snapshot. The generator restarts from the
    /// recorded seed, so this is intended for freshly spawned scene files and
    /// replay entry points rather than mid-trial checkpoints.
    pub fn from_snapshot(snap: &SceneSnapshot) -> Result<SceneState, WorldError> {
        let mut seen = std::collections::HashSet::new();
        for obj in &snap.objects {
            if !seen.insert(obj.id.clone()) {
                return Err(WorldError::BadSnapshot {
                    detail: format!("duplicate object id {}", obj.id),
                });
            }
            if !obj.pose.iter().all(|v| v.is_finite()) {
                return Err(WorldError::BadSnapshot {
                    detail: format!("non-finite pose on {}", obj.id),
                });
            }
        }
        if let Some(held) = &snap.held {
            if !seen.contains(held) {
                return Err(WorldError::BadSnapshot { detail: format!("held id {held} not in objects") });
            }
        }
        Ok(SceneState {
            objects: snap
                .objects
                .iter()
                .map(|o| RigidObject {
                    id: o.id.clone(),
                    kind: o.kind,
                    color: o.color,
                    pose: Vec3::new(o.pose[0], o.pose[1], o.pose[2]),
                    supported_by: o.supported_by.clone(),
                })
                .collect(),
            held: snap.held.clone(),
            rng: ChaCha8Rng::seed_from_u64(snap.seed),
            seed: snap.seed,
            step_counter: 0,
        })
    }
}
