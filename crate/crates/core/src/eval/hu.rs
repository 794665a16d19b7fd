//! Shape descriptors for facial regions: landmark polylines rasterized onto
//! a small canvas, Hu invariant moments of the strokes, and the per-region
//! parent-child heritability map built from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::verify::cosine_distance;

/// The four facial regions compared between child and parents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Eyes,
    Nose,
    Mouth,
    Chin,
}

pub const REGIONS: [Region; 4] = [Region::Eyes, Region::Nose, Region::Mouth, Region::Chin];

impl Region {
    /// Eyes and mouth are closed contours; nose and chin are open polylines.
    pub fn closed(&self) -> bool {
        matches!(self, Region::Eyes | Region::Mouth)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Region::Eyes => "eyes",
            Region::Nose => "nose",
            Region::Mouth => "mouth",
            Region::Chin => "chin",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegionsJson {
    eyes: Vec<[f64; 2]>,
    nose: Vec<[f64; 2]>,
    mouth: Vec<[f64; 2]>,
    chin: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LandmarkFile {
    regions: RegionsJson,
}

/// Ordered 2-D landmark points per region, pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    regions: BTreeMap<Region, Vec<[f64; 2]>>,
}

impl LandmarkSet {
    pub fn new(regions: BTreeMap<Region, Vec<[f64; 2]>>) -> Result<Self> {
        for region in REGIONS {
            let pts = regions
                .get(&region)
                .ok_or_else(|| Error::invalid(format!("missing region {}", region.name())))?;
            if pts.len() < 3 {
                return Err(Error::invalid(format!(
                    "region {} has {} points, need at least 3",
                    region.name(),
                    pts.len()
                )));
            }
            for p in pts {
                if !p[0].is_finite() || !p[1].is_finite() || p[0] < 0.0 || p[1] < 0.0 {
                    return Err(Error::invalid(format!(
                        "region {}: bad coordinate ({}, {})",
                        region.name(),
                        p[0],
                        p[1]
                    )));
                }
            }
        }
        Ok(LandmarkSet { regions })
    }

    pub fn region(&self, region: Region) -> &[[f64; 2]] {
        &self.regions[&region]
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: LandmarkFile =
            serde_json::from_str(json).map_err(|e| Error::invalid(format!("landmark json: {e}")))?;
        let mut map = BTreeMap::new();
        map.insert(Region::Eyes, file.regions.eyes);
        map.insert(Region::Nose, file.regions.nose);
        map.insert(Region::Mouth, file.regions.mouth);
        map.insert(Region::Chin, file.regions.chin);
        LandmarkSet::new(map)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = LandmarkFile {
            regions: RegionsJson {
                eyes: self.regions[&Region::Eyes].clone(),
                nose: self.regions[&Region::Nose].clone(),
                mouth: self.regions[&Region::Mouth].clone(),
                chin: self.regions[&Region::Chin].clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("landmark serialization is infallible")
    }
}

/// Square binary raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    side: usize,
    bits: Vec<bool>,
}

impl Raster {
    pub fn new(side: usize) -> Self {
        Raster {
            side,
            bits: vec![false; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.side + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.side + x] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set pixels as (x, y) pairs, row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.side, i / self.side))
    }

    /// Integer-translated copy on a canvas of `new_side`.
    pub fn translated(&self, dx: usize, dy: usize, new_side: usize) -> Raster {
        let mut out = Raster::new(new_side);
        for (x, y) in self.pixels() {
            out.set(x + dx, y + dy);
        }
        out
    }

    /// Quarter-turn: (x, y) -> (y, side-1-x).
    pub fn rotated90(&self) -> Raster {
        let mut out = Raster::new(self.side);
        for (x, y) in self.pixels() {
            out.set(y, self.side - 1 - x);
        }
        out
    }

    /// Nearest-neighbour 2x upscale: each pixel becomes a 2x2 block.
    pub fn upscaled2(&self) -> Raster {
        let mut out = Raster::new(self.side * 2);
        for (x, y) in self.pixels() {
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                out.set(2 * x + dx, 2 * y + dy);
            }
        }
        out
    }
}

fn bresenham(raster: &mut Raster, a: (i64, i64), b: (i64, i64)) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < raster.side && (y0 as usize) < raster.side {
            raster.set(x0 as usize, y0 as usize);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Draw a region's polyline (closed for eyes/mouth, open for nose/chin) with
/// 1-pixel strokes. The bounding box is normalized to 80% of the canvas and
/// centered, so the raster ignores where the region sat in the image.
pub fn rasterize_region(points: &[[f64; 2]], closed: bool, canvas_side: usize) -> Result<Raster> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "rasterize_region needs at least 3 points, got {}",
            points.len()
        )));
    }
    if canvas_side < 8 {
        return Err(Error::invalid("canvas_side must be at least 8"));
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let extent = (max_x - min_x).max(max_y - min_y);
    if extent == 0.0 {
        return Err(Error::invalid("degenerate region: all points identical"));
    }
    let scale = 0.8 * (canvas_side as f64 - 1.0) / extent;
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    let center = (canvas_side as f64 - 1.0) / 2.0;
    let to_px = |p: &[f64; 2]| -> (i64, i64) {
        (
            ((p[0] - cx) * scale + center).round() as i64,
            ((p[1] - cy) * scale + center).round() as i64,
        )
    };

    let mut raster = Raster::new(canvas_side);
    for w in points.windows(2) {
        bresenham(&mut raster, to_px(&w[0]), to_px(&w[1]));
    }
    if closed {
        bresenham(
            &mut raster,
            to_px(points.last().unwrap()),
            to_px(&points[0]),
        );
    }
    Ok(raster)
}

/// The seven Hu invariants of a binary raster.
///
/// Central moments run up to order 3 and are normalized as
/// `eta_pq = mu_pq / mu00^(1+(p+q)/2)`. Coordinates are taken relative to the
/// set-pixel bounding box first: mathematically a no-op (central moments are
/// translation invariant) that also makes integer translations of the raster
/// bitwise exact.
pub fn hu_moments(raster: &Raster) -> Result<[f64; 7]> {
    let n = raster.count();
    if n == 0 {
        return Err(Error::invalid("hu_moments on an empty raster"));
    }
    let min_x = raster.pixels().map(|(x, _)| x).min().unwrap();
    let min_y = raster.pixels().map(|(_, y)| y).min().unwrap();

    let m00 = n as f64;
    let mut m10 = 0.0;
    let mut m01 = 0.0;
    for (x, y) in raster.pixels() {
        m10 += (x - min_x) as f64;
        m01 += (y - min_y) as f64;
    }
    let xc = m10 / m00;
    let yc = m01 / m00;

    let mut mu = [[0.0f64; 4]; 4];
    for (x, y) in raster.pixels() {
        let dx = (x - min_x) as f64 - xc;
        let dy = (y - min_y) as f64 - yc;
        let dx2 = dx * dx;
        let dy2 = dy * dy;
        mu[1][1] += dx * dy;
        mu[2][0] += dx2;
        mu[0][2] += dy2;
        mu[3][0] += dx2 * dx;
        mu[0][3] += dy2 * dy;
        mu[2][1] += dx2 * dy;
        mu[1][2] += dx * dy2;
    }

    let eta = |p: usize, q: usize| -> f64 {
        mu[p][q] / m00.powf(1.0 + (p + q) as f64 / 2.0)
    };
    let n20 = eta(2, 0);
    let n02 = eta(0, 2);
    let n11 = eta(1, 1);
    let n30 = eta(3, 0);
    let n03 = eta(0, 3);
    let n21 = eta(2, 1);
    let n12 = eta(1, 2);

    let i1 = n20 + n02;
    let i2 = (n20 - n02).powi(2) + 4.0 * n11 * n11;
    let i3 = (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2);
    let i4 = (n30 + n12).powi(2) + (n21 + n03).powi(2);
    let i5 = (n30 - 3.0 * n12)
        * (n30 + n12)
        * ((n30 + n12).powi(2) - 3.0 * (n21 + n03).powi(2))
        + (3.0 * n21 - n03) * (n21 + n03) * (3.0 * (n30 + n12).powi(2) - (n21 + n03).powi(2));
    let i6 = (n20 - n02) * ((n30 + n12).powi(2) - (n21 + n03).powi(2))
        + 4.0 * n11 * (n30 + n12) * (n21 + n03);
    let i7 = (3.0 * n21 - n03)
        * (n30 + n12)
        * ((n30 + n12).powi(2) - 3.0 * (n21 + n03).powi(2))
        - (n30 - 3.0 * n12) * (n21 + n03) * (3.0 * (n30 + n12).powi(2) - (n21 + n03).powi(2));

    let out = [i1, i2, i3, i4, i5, i6, i7];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hu_moments".into()));
    }
    Ok(out)
}

/// `sign(v) * log10(|v|)`, with 0 mapped to 0. Raw Hu invariants span many
/// orders of magnitude; cosine comparison needs this compression.
pub fn log_magnitude(hu: &[f64; 7]) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (o, &v) in out.iter_mut().zip(hu) {
        *o = if v == 0.0 {
            0.0
        } else {
            v.signum() * v.abs().log10()
        };
    }
    out
}

/// Per-region accumulated cosine distance between the child's shape
/// descriptor and each parent's.
#[derive(Debug, Clone, PartialEq)]
pub struct HeritabilityMap {
    pub per_region: BTreeMap<Region, f64>,
}

fn descriptor_distance(a: &[f64; 7], b: &[f64; 7]) -> f64 {
    if a == b {
        return 0.0;
    }
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        // one degenerate descriptor, maximally dissimilar by convention
        return 1.0;
    }
    cosine_distance(a, b).expect("non-zero vectors")
}

/// For each region, `cosdist(hu(child), hu(father)) +
/// cosdist(hu(child), hu(mother))` on log-magnitude descriptors.
pub fn heritability_map(
    child: &LandmarkSet,
    father: &LandmarkSet,
    mother: &LandmarkSet,
    canvas_side: usize,
) -> Result<HeritabilityMap> {
    let mut per_region = BTreeMap::new();
    for region in REGIONS {
        let descr = |set: &LandmarkSet| -> Result<[f64; 7]> {
            let raster = rasterize_region(set.region(region), region.closed(), canvas_side)?;
            Ok(log_magnitude(&hu_moments(&raster)?))
        };
        let c = descr(child)?;
        let f = descr(father)?;
        let m = descr(mother)?;
        per_region.insert(region, descriptor_distance(&c, &f) + descriptor_distance(&c, &m));
    }
    Ok(HeritabilityMap { per_region })
}
