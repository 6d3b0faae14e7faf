//! Campus geometry: co-registered DEM, building, canopy and land-cover rasters.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grd::{self, GrdError, GrdRaster};
use crate::grid::{Grid, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LandCover {
    Paved = 0,
    Grass = 1,
    Tree = 2,
    Water = 3,
    Building = 4,
    Bare = 5,
}

impl LandCover {
    pub const ALL: [LandCover; 6] = [
        LandCover::Paved,
        LandCover::Grass,
        LandCover::Tree,
        LandCover::Water,
        LandCover::Building,
        LandCover::Bare,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            LandCover::Paved => "paved",
            LandCover::Grass => "grass",
            LandCover::Tree => "tree",
            LandCover::Water => "water",
            LandCover::Building => "building",
            LandCover::Bare => "bare",
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("infeasible scene spec: {0}")]
    Infeasible(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Grd(#[from] GrdError),
    #[error("scene metadata: {0}")]
    Metadata(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScene {
    pub cell_size: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub dem: Raster,
    pub building_height: Raster,
    pub canopy_height: Raster,
    /// Integer land-cover codes stored as floats, see [`LandCover`].
    pub landcover: Raster,
}

impl GridScene {
    pub fn nrows(&self) -> usize {
        self.dem.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.dem.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dem.shape()
    }

    /// Land cover at a cell; unknown codes map to `None`.
    pub fn landcover_at(&self, row: usize, col: usize) -> Option<LandCover> {
        let v = self.landcover.at(row, col);
        if v.fract() != 0.0 || v < 0.0 {
            return None;
        }
        LandCover::from_code(v as u8)
    }

    /// Cells that produce UTCI values (everything except buildings).
    pub fn valid_mask(&self) -> Grid<bool> {
        self.landcover.map(|&v| v != LandCover::Building.code() as f32)
    }

    /// Absolute surface height used as an obstacle: ground plus the taller of
    /// building and canopy.
    pub fn surface(&self, row: usize, col: usize) -> f64 {
        let ground = self.dem.at(row, col) as f64;
        let b = self.building_height.at(row, col) as f64;
        let t = self.canopy_height.at(row, col) as f64;
        ground + b.max(t)
    }

    pub fn crop(&self, row: usize, col: usize, nrows: usize, ncols: usize) -> Self {
        Self {
            cell_size: self.cell_size,
            latitude: self.latitude,
            longitude: self.longitude,
            dem: self.dem.crop(row, col, nrows, ncols),
            building_height: self.building_height.crop(row, col, nrows, ncols),
            canopy_height: self.canopy_height.crop(row, col, nrows, ncols),
            landcover: self.landcover.crop(row, col, nrows, ncols),
        }
    }

    /// A flat all-grass scene, useful as a starting canvas.
    pub fn flat(nrows: usize, ncols: usize, cell_size: f64) -> Self {
        Self {
            cell_size,
            latitude: DEFAULT_LATITUDE,
            longitude: DEFAULT_LONGITUDE,
            dem: Raster::filled(nrows, ncols, DEFAULT_GROUND_ELEVATION),
            building_height: Raster::filled(nrows, ncols, 0.0),
            canopy_height: Raster::filled(nrows, ncols, 0.0),
            landcover: Raster::filled(nrows, ncols, LandCover::Grass.code() as f32),
        }
    }
}

/// College Station, Texas.
pub const DEFAULT_LATITUDE: f64 = 30.6;
pub const DEFAULT_LONGITUDE: f64 = -96.34;
pub const DEFAULT_GROUND_ELEVATION: f32 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub nrows: usize,
    pub ncols: usize,
    pub n_buildings: usize,
    pub n_tree_clusters: usize,
    pub parking_fraction: f64,
    pub water: bool,
    pub cell_size: f64,
    pub latitude: f64,
    pub longitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            nrows: 64,
            ncols: 64,
            n_buildings: 3,
            n_tree_clusters: 4,
            parking_fraction: 0.15,
            water: false,
            cell_size: 1.0,
            latitude: DEFAULT_LATITUDE,
            longitude: DEFAULT_LONGITUDE,
        }
    }
}

impl SceneSpec {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            n_buildings: 0,
            n_tree_clusters: 0,
            parking_fraction: 0.0,
            water: false,
            ..Self::default()
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 500;
const BUILDING_HEIGHT_RANGE: (f32, f32) = (8.0, 30.0);
const CANOPY_HEIGHT_RANGE: (f32, f32) = (5.0, 12.0);

#[derive(Clone, Copy)]
struct Rect {
    row: usize,
    col: usize,
    nrows: usize,
    ncols: usize,
}

impl Rect {
    fn cells(self) -> impl Iterator<Item = (usize, usize)> {
        (self.row..self.row + self.nrows)
            .flat_map(move |r| (self.col..self.col + self.ncols).map(move |c| (r, c)))
    }
}

/// Generate a seeded synthetic campus.
///
/// Layout order: optional water body, one contiguous parking lot, buildings
/// (never touching each other, water or parking, even diagonally), then
/// circular tree clusters that only replace grass.
pub fn generate_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<GridScene, SceneError> {
    if spec.nrows < 64 || spec.ncols < 64 {
        return Err(SceneError::InvalidSpec(format!(
            "scene must be at least 64x64, got {}x{}",
            spec.nrows, spec.ncols
        )));
    }
    if !(0.0..=1.0).contains(&spec.parking_fraction) {
        return Err(SceneError::InvalidSpec(format!(
            "parking_fraction {} outside [0, 1]",
            spec.parking_fraction
        )));
    }
    if !(spec.cell_size.is_finite() && spec.cell_size > 0.0) {
        return Err(SceneError::InvalidSpec("cell_size must be positive".into()));
    }

    let (nrows, ncols) = (spec.nrows, spec.ncols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GridScene::flat(nrows, ncols, spec.cell_size);
    scene.latitude = spec.latitude;
    scene.longitude = spec.longitude;
    let mut lc = Grid::filled(nrows, ncols, LandCover::Grass);

    if spec.water {
        let rr = (nrows / 10).max(3);
        let rc = (ncols / 8).max(4);
        let cr = rng.gen_range(rr..nrows - rr) as f64;
        let cc = rng.gen_range(rc..ncols - rc) as f64;
        for r in 0..nrows {
            for c in 0..ncols {
                let dr = (r as f64 - cr) / rr as f64;
                let dc = (c as f64 - cc) / rc as f64;
                if dr * dr + dc * dc <= 1.0 {
                    lc.set(r, c, LandCover::Water);
                }
            }
        }
    }

    let parking_cells = (spec.parking_fraction * (nrows * ncols) as f64).round() as usize;
    if parking_cells > 0 {
        let pr = ((parking_cells as f64).sqrt().ceil() as usize).min(nrows);
        let pc = parking_cells.div_ceil(pr);
        if pc > ncols {
            return Err(SceneError::Infeasible(format!(
                "parking lot of {parking_cells} cells does not fit"
            )));
        }
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let rect = Rect {
                row: rng.gen_range(0..=nrows - pr),
                col: rng.gen_range(0..=ncols - pc),
                nrows: pr,
                ncols: pc,
            };
            if rect.cells().all(|(r, c)| *lc.get(r, c) != LandCover::Water) {
                rect.cells().for_each(|(r, c)| lc.set(r, c, LandCover::Paved));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SceneError::Infeasible(
                "parking lot overlaps the water body in every placement".into(),
            ));
        }
    }

    let min_side = (nrows.min(ncols) / 10).max(5);
    let max_side = (nrows.min(ncols) / 5).max(min_side + 1);
    for i in 0..spec.n_buildings {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let h = rng.gen_range(min_side..=max_side);
            let w = rng.gen_range(min_side..=max_side);
            let height = rng.gen_range(BUILDING_HEIGHT_RANGE.0..=BUILDING_HEIGHT_RANGE.1);
            // leave a one-cell margin around the frame edge
            if h + 2 > nrows || w + 2 > ncols {
                continue;
            }
            let rect = Rect {
                row: rng.gen_range(1..=nrows - h - 1),
                col: rng.gen_range(1..=ncols - w - 1),
                nrows: h,
                ncols: w,
            };
            let halo = Rect {
                row: rect.row - 1,
                col: rect.col - 1,
                nrows: h + 2,
                ncols: w + 2,
            };
            if halo.cells().all(|(r, c)| *lc.get(r, c) == LandCover::Grass) {
                for (r, c) in rect.cells() {
                    lc.set(r, c, LandCover::Building);
                    scene.building_height.set(r, c, height);
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SceneError::Infeasible(format!(
                "could not place building {} of {} without overlap",
                i + 1,
                spec.n_buildings
            )));
        }
    }

    let max_radius = (nrows.min(ncols) as f64 / 12.0).max(3.0);
    for _ in 0..spec.n_tree_clusters {
        let radius = rng.gen_range(2.5..=max_radius);
        let top = rng.gen_range(CANOPY_HEIGHT_RANGE.0..=CANOPY_HEIGHT_RANGE.1);
        let cr = rng.gen_range(0.0..nrows as f64);
        let cc = rng.gen_range(0.0..ncols as f64);
        let mut planted = 0usize;
        let r0 = (cr - radius).floor().max(0.0) as usize;
        let r1 = ((cr + radius).ceil() as usize).min(nrows - 1);
        let c0 = (cc - radius).floor().max(0.0) as usize;
        let c1 = ((cc + radius).ceil() as usize).min(ncols - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = ((r as f64 + 0.5 - cr).powi(2) + (c as f64 + 0.5 - cc).powi(2)).sqrt();
                if d > radius {
                    continue;
                }
                match *lc.get(r, c) {
                    LandCover::Grass | LandCover::Tree => {
                        // dome-shaped crown, never below the minimum canopy height
                        let h = (top * (1.0 - 0.3 * (d / radius).powi(2) as f32))
                            .max(CANOPY_HEIGHT_RANGE.0);
                        let cur = scene.canopy_height.at(r, c);
                        scene.canopy_height.set(r, c, cur.max(h));
                        lc.set(r, c, LandCover::Tree);
                        planted += 1;
                    }
                    _ => {}
                }
            }
        }
        if planted == 0 {
            // cluster landed entirely on non-grass; plant a single tree at the
            // nearest grass cell to honour the requested count
            let nearest = (0..nrows)
                .flat_map(|r| (0..ncols).map(move |c| (r, c)))
                .filter(|&(r, c)| *lc.get(r, c) == LandCover::Grass)
                .min_by(|a, b| {
                    let da = (a.0 as f64 - cr).powi(2) + (a.1 as f64 - cc).powi(2);
                    let db = (b.0 as f64 - cr).powi(2) + (b.1 as f64 - cc).powi(2);
                    da.total_cmp(&db)
                });
            match nearest {
                Some((r, c)) => {
                    lc.set(r, c, LandCover::Tree);
                    scene.canopy_height.set(r, c, top);
                }
                None => {
                    return Err(SceneError::Infeasible(
                        "no grass left to plant tree clusters".into(),
                    ))
                }
            }
        }
    }

    scene.landcover = lc.map(|c| c.code() as f32);
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub raster: String,
    pub cell: Option<(usize, usize)>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.cell {
            Some((r, c)) => write!(f, "{} ({r},{c}): {}", self.raster, self.rule),
            None => write!(f, "{}: {}", self.raster, self.rule),
        }
    }
}

/// Check every [`GridScene`] invariant. An empty list means the scene is valid.
pub fn validate_scene(scene: &GridScene) -> Vec<Violation> {
    let mut out = Vec::new();
    let shape = scene.dem.shape();
    let layers: [(&str, &Raster); 4] = [
        ("dem", &scene.dem),
        ("building_height", &scene.building_height),
        ("canopy_height", &scene.canopy_height),
        ("landcover", &scene.landcover),
    ];
    for (name, layer) in layers {
        if layer.shape() != shape {
            out.push(Violation {
                raster: name.into(),
                cell: None,
                rule: format!("shape {:?} differs from dem shape {:?}", layer.shape(), shape),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }
    if shape.0 == 0 || shape.1 == 0 {
        out.push(Violation {
            raster: "dem".into(),
            cell: None,
            rule: "scene has no cells".into(),
        });
        return out;
    }
    if !(scene.cell_size.is_finite() && scene.cell_size > 0.0) {
        out.push(Violation {
            raster: "scene".into(),
            cell: None,
            rule: "cell_size must be positive".into(),
        });
    }

    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let cell = Some((r, c));
            let push = |out: &mut Vec<Violation>, raster: &str, rule: &str| {
                out.push(Violation {
                    raster: raster.into(),
                    cell,
                    rule: rule.into(),
                })
            };
            if !scene.dem.at(r, c).is_finite() {
                push(&mut out, "dem", "non-finite");
            }
            let b = scene.building_height.at(r, c);
            let t = scene.canopy_height.at(r, c);
            for (name, v) in [("building_height", b), ("canopy_height", t)] {
                if !v.is_finite() {
                    push(&mut out, name, "non-finite");
                } else if v < 0.0 {
                    push(&mut out, name, "negative height");
                }
            }
            let class = scene.landcover_at(r, c);
            let Some(class) = class else {
                push(&mut out, "landcover", "code outside 0..=5");
                continue;
            };
            let is_building = class == LandCover::Building;
            if (b > 0.0) != is_building {
                push(
                    &mut out,
                    "building_height",
                    "building_height > 0 must coincide with landcover building",
                );
            }
            if t > 0.0 && class != LandCover::Tree {
                push(
                    &mut out,
                    "canopy_height",
                    "canopy_height > 0 requires landcover tree",
                );
            }
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    cell_size: f64,
    latitude: f64,
    longitude: f64,
    nrows: usize,
    ncols: usize,
}

const LAYER_FILES: [&str; 4] = [
    "dem.grd",
    "building_height.grd",
    "canopy_height.grd",
    "landcover.grd",
];

/// Write the scene as one GRD per layer plus `scene.json`.
pub fn save_scene(scene: &GridScene, dir: impl AsRef<Path>) -> Result<(), SceneError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let layers = [
        &scene.dem,
        &scene.building_height,
        &scene.canopy_height,
        &scene.landcover,
    ];
    for (file, layer) in LAYER_FILES.iter().zip(layers) {
        grd::save(&GrdRaster::new(layer.clone(), scene.cell_size), dir.join(file))?;
    }
    let meta = SceneMeta {
        cell_size: scene.cell_size,
        latitude: scene.latitude,
        longitude: scene.longitude,
        nrows: scene.nrows(),
        ncols: scene.ncols(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| SceneError::Metadata(e.to_string()))?;
    fs::write(dir.join("scene.json"), json)?;
    Ok(())
}

/// Load a scene directory and validate it.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<GridScene, SceneError> {
    let dir = dir.as_ref();
    let meta: SceneMeta = serde_json::from_str(&fs::read_to_string(dir.join("scene.json"))?)
        .map_err(|e| SceneError::Metadata(e.to_string()))?;
    let mut layers = Vec::with_capacity(4);
    for file in LAYER_FILES {
        layers.push(grd::load(dir.join(file))?.raster);
    }
    let landcover = layers.pop().unwrap();
    let canopy_height = layers.pop().unwrap();
    let building_height = layers.pop().unwrap();
    let dem = layers.pop().unwrap();
    let scene = GridScene {
        cell_size: meta.cell_size,
        latitude: meta.latitude,
        longitude: meta.longitude,
        dem,
        building_height,
        canopy_height,
        landcover,
    };
    let violations = validate_scene(&scene);
    if violations.is_empty() {
        Ok(scene)
    } else {
        Err(SceneError::Invalid(violations))
    }
}
