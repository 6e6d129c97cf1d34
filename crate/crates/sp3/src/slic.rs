//! SLIC superpixel generation and the per-superpixel index used by the
//! propagation ops.
//!
//! Clustering runs k-means in joint intensity-space coordinates with the
//! distance `D^2 = d_int^2 + (d_spatial / S)^2 * m^2`, where `S = sqrt(H*W/n)`
//! and `m` is the compactness. Candidate centers for a pixel are those whose
//! 2S x 2S window covers it. After convergence, 4-connected fragments smaller
//! than `(H*W/n)/4` are merged into their largest adjacent superpixel and ids
//! are relabeled densely from zero.
//!
//! The assignment step is a pure function of the previous iteration's centers,
//! so results are bitwise independent of the rayon pool size.

use rayon::prelude::*;

use crate::error::{Result, SpError};
use crate::grid::{GridShape, LabelGrid, IGNORE};

/// Single-channel image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(SpError::InvalidParameter(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(SpError::ShapeMismatch {
                expected: format!("{} intensities", height * width),
                actual: format!("{}", data.len()),
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(SpError::InvalidParameter(format!(
                    "intensity {v} at pixel {i} outside [0, 1]"
                )));
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Per-pixel superpixel ids plus the per-superpixel index (member pixel
/// lists and sizes). Ids are dense in `0..n()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    sp_id: Vec<u32>,
    members: Vec<Vec<usize>>,
    sizes: Vec<usize>,
}

impl SuperpixelMap {
    /// Build the index from a per-pixel id grid. Ids must be dense: every id
    /// in `0..=max` must own at least one pixel.
    pub fn from_sp_grid(height: usize, width: usize, sp_id: Vec<u32>) -> Result<Self> {
        if height < 1 || width < 1 || sp_id.len() != height * width {
            return Err(SpError::ShapeMismatch {
                expected: format!("{} ids", height * width),
                actual: format!("{}", sp_id.len()),
            });
        }
        let n = *sp_id.iter().max().unwrap() as usize + 1;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (px, &id) in sp_id.iter().enumerate() {
            members[id as usize].push(px);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(SpError::InvalidParameter(format!(
                "superpixel ids are not dense: id {empty} has no pixels"
            )));
        }
        let sizes = members.iter().map(|m| m.len()).collect();
        Ok(Self { height, width, sp_id, members, sizes })
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn sp_ids(&self) -> &[u32] {
        &self.sp_id
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub(crate) fn check_plane(&self, shape: &GridShape) -> Result<()> {
        if self.height != shape.height || self.width != shape.width {
            return Err(SpError::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", shape.height, shape.width),
            });
        }
        Ok(())
    }

    /// True when every superpixel is a single 4-connected component
    /// (flood-fill check).
    pub fn all_connected(&self) -> bool {
        let mut seen = vec![false; self.pixels()];
        let mut component_of_id = vec![false; self.n()];
        let w = self.width;
        let mut stack = Vec::new();
        for start in 0..self.pixels() {
            if seen[start] {
                continue;
            }
            let id = self.sp_id[start];
            if component_of_id[id as usize] {
                // a second component with an id we already flooded
                return false;
            }
            component_of_id[id as usize] = true;
            stack.push(start);
            seen[start] = true;
            while let Some(px) = stack.pop() {
                let (r, c) = (px / w, px % w);
                let mut visit = |nr: usize, nc: usize| {
                    let np = nr * w + nc;
                    if !seen[np] && self.sp_id[np] == id {
                        seen[np] = true;
                        stack.push(np);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.height {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < w {
                    visit(r, c + 1);
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct Center {
    row: f64,
    col: f64,
    intensity: f64,
}

/// Generate superpixels with SLIC.
///
/// `n` is the requested superpixel count (the realized count differs after
/// connectivity enforcement), `compactness` trades intensity adherence
/// against spatial regularity, `max_iters` bounds the k-means loop. The
/// procedure contains no randomness; `_seed` is accepted so callers can pin
/// one anyway.
pub fn slic_segment(
    image: &Image,
    n: usize,
    compactness: f64,
    max_iters: usize,
    _seed: u64,
) -> Result<SuperpixelMap> {
    let (h, w) = (image.height(), image.width());
    let pixels = h * w;
    if n < 1 || n > pixels {
        return Err(SpError::InvalidParameter(format!(
            "superpixel count {n} outside [1, {pixels}]"
        )));
    }
    if !(compactness > 0.0) {
        return Err(SpError::InvalidParameter(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    if max_iters < 1 {
        return Err(SpError::InvalidParameter("max_iters must be at least 1".into()));
    }

    let s = (pixels as f64 / n as f64).sqrt();
    let mut centers = initial_centers(image, n);
    let m = compactness;

    let mut assign: Vec<u32> = vec![0; pixels];
    for iter in 0..max_iters {
        let new_assign: Vec<u32> = (0..pixels)
            .into_par_iter()
            .map(|px| assign_pixel(image, &centers, px, s, m))
            .collect();
        let changed = assign
            .iter()
            .zip(&new_assign)
            .filter(|(a, b)| a != b)
            .count();
        assign = new_assign;
        if changed == 0 && iter > 0 {
            break;
        }
        update_centers(image, &assign, &mut centers);
    }

    let min_size = pixels as f64 / n as f64 / 4.0;
    let final_ids = enforce_connectivity(&assign, h, w, min_size);
    SuperpixelMap::from_sp_grid(h, w, final_ids)
}

/// Place centers on a near-regular grid and nudge each to the lowest-gradient
/// pixel in its 3x3 neighborhood so no center starts on an edge. Grid
/// positions are continuous (cell midpoints), which keeps Voronoi midlines
/// between pixels; a center is snapped to a pixel only when that pixel's
/// gradient is strictly lower.
fn initial_centers(image: &Image, n: usize) -> Vec<Center> {
    let (h, w) = (image.height(), image.width());
    let cols = ((n as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let rows = ((n as f64 / cols as f64).round() as usize).clamp(1, h);
    let mut centers = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let row = (i as f64 + 0.5) * h as f64 / rows as f64 - 0.5;
            let col = (j as f64 + 0.5) * w as f64 / cols as f64 - 0.5;
            let pr = (row.round() as usize).min(h - 1);
            let pc = (col.round() as usize).min(w - 1);
            let (gr, gc) = lowest_gradient_in_3x3(image, pr, pc);
            if (gr, gc) != (pr, pc) {
                centers.push(Center {
                    row: gr as f64,
                    col: gc as f64,
                    intensity: image.get(gr, gc),
                });
            } else {
                centers.push(Center {
                    row,
                    col,
                    intensity: image.get(pr, pc),
                });
            }
        }
    }
    centers
}

fn squared_gradient(image: &Image, r: usize, c: usize) -> f64 {
    let (h, w) = (image.height(), image.width());
    let right = image.get(r, (c + 1).min(w - 1));
    let left = image.get(r, c.saturating_sub(1));
    let down = image.get((r + 1).min(h - 1), c);
    let up = image.get(r.saturating_sub(1), c);
    (right - left) * (right - left) + (down - up) * (down - up)
}

fn lowest_gradient_in_3x3(image: &Image, r: usize, c: usize) -> (usize, usize) {
    let (h, w) = (image.height(), image.width());
    // move only on strictly lower gradient so centers stay put on flat regions
    let mut best = (r, c);
    let mut best_g = squared_gradient(image, r, c);
    for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
        for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
            let g = squared_gradient(image, nr, nc);
            if g < best_g {
                best_g = g;
                best = (nr, nc);
            }
        }
    }
    best
}

fn assign_pixel(image: &Image, centers: &[Center], px: usize, s: f64, m: f64) -> u32 {
    let w = image.width();
    let (r, c) = ((px / w) as f64, (px % w) as f64);
    let intensity = image.data()[px];
    let mut best = u32::MAX;
    let mut best_d = f64::INFINITY;
    for (k, ctr) in centers.iter().enumerate() {
        if (r - ctr.row).abs() <= s && (c - ctr.col).abs() <= s {
            let di = intensity - ctr.intensity;
            let spatial_sq = (r - ctr.row) * (r - ctr.row) + (c - ctr.col) * (c - ctr.col);
            let d = di * di + spatial_sq / (s * s) * (m * m);
            if d < best_d {
                best_d = d;
                best = k as u32;
            }
        }
    }
    if best == u32::MAX {
        // no 2S window covers this pixel; take the spatially nearest center
        let mut best_sq = f64::INFINITY;
        for (k, ctr) in centers.iter().enumerate() {
            let spatial_sq = (r - ctr.row) * (r - ctr.row) + (c - ctr.col) * (c - ctr.col);
            if spatial_sq < best_sq {
                best_sq = spatial_sq;
                best = k as u32;
            }
        }
    }
    best
}

fn update_centers(image: &Image, assign: &[u32], centers: &mut [Center]) {
    let w = image.width();
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
    for (px, &k) in assign.iter().enumerate() {
        let e = &mut sums[k as usize];
        e.0 += (px / w) as f64;
        e.1 += (px % w) as f64;
        e.2 += image.data()[px];
        e.3 += 1;
    }
    for (k, e) in sums.iter().enumerate() {
        if e.3 > 0 {
            let inv = 1.0 / e.3 as f64;
            centers[k] = Center {
                row: e.0 * inv,
                col: e.1 * inv,
                intensity: e.2 * inv,
            };
        }
        // empty clusters keep their previous position
    }
}

/// Relabel the assignment so each final superpixel is one 4-connected
/// component of at least `min_size` pixels (when it has any neighbor).
/// Fragments merge into their largest adjacent group; ties go to the group
/// with the smaller component id. Final ids are dense, ordered by each
/// group's first pixel in row-major order.
fn enforce_connectivity(assign: &[u32], h: usize, w: usize, min_size: f64) -> Vec<u32> {
    let pixels = h * w;
    // flood-fill components of equal assignment, in row-major seed order
    let mut comp = vec![usize::MAX; pixels];
    let mut comp_sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..pixels {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_sizes.len();
        let value = assign[start];
        let mut size = 0;
        comp[start] = id;
        stack.push(start);
        while let Some(px) = stack.pop() {
            size += 1;
            let (r, c) = (px / w, px % w);
            let mut visit = |np: usize| {
                if comp[np] == usize::MAX && assign[np] == value {
                    comp[np] = id;
                    stack.push(np);
                }
            };
            if r > 0 {
                visit(px - w);
            }
            if r + 1 < h {
                visit(px + w);
            }
            if c > 0 {
                visit(px - 1);
            }
            if c + 1 < w {
                visit(px + 1);
            }
        }
        comp_sizes.push(size);
    }
    let n_comps = comp_sizes.len();

    // component adjacency from horizontal and vertical pixel pairs
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_comps];
    let add_edge = |a: usize, b: usize, adjacency: &mut Vec<Vec<usize>>| {
        if a != b {
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
            }
            if !adjacency[b].contains(&a) {
                adjacency[b].push(a);
            }
        }
    };
    for r in 0..h {
        for c in 0..w {
            let px = r * w + c;
            if c + 1 < w {
                add_edge(comp[px], comp[px + 1], &mut adjacency);
            }
            if r + 1 < h {
                add_edge(comp[px], comp[px + w], &mut adjacency);
            }
        }
    }

    // union-find with accumulated sizes
    let mut parent: Vec<usize> = (0..n_comps).collect();
    let mut group_size = comp_sizes.clone();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    loop {
        let mut merged_any = false;
        for c0 in 0..n_comps {
            let root = find(&mut parent, c0);
            if group_size[root] as f64 >= min_size {
                continue;
            }
            // gather adjacent groups of the whole current group
            let mut best: Option<usize> = None;
            for member in 0..n_comps {
                if find(&mut parent, member) != root {
                    continue;
                }
                for &nb in &adjacency[member] {
                    let nb_root = find(&mut parent, nb);
                    if nb_root == root {
                        continue;
                    }
                    best = Some(match best {
                        None => nb_root,
                        Some(cur) => {
                            if group_size[nb_root] > group_size[cur]
                                || (group_size[nb_root] == group_size[cur] && nb_root < cur)
                            {
                                nb_root
                            } else {
                                cur
                            }
                        }
                    });
                }
            }
            if let Some(target) = best {
                parent[root] = target;
                group_size[target] += group_size[root];
                merged_any = true;
            }
        }
        if !merged_any {
            break;
        }
    }

    // dense relabel in row-major first-pixel order
    let mut new_id = vec![u32::MAX; n_comps];
    let mut next = 0u32;
    let mut out = vec![0u32; pixels];
    for px in 0..pixels {
        let root = find(&mut parent, comp[px]);
        if new_id[root] == u32::MAX {
            new_id[root] = next;
            next += 1;
        }
        out[px] = new_id[root];
    }
    out
}

/// Per-superpixel label counts. `counts[c]` is the number of member pixels
/// labeled `c`; IGNORE pixels land in the separate `ignored` bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    pub counts: Vec<usize>,
    pub ignored: usize,
}

pub fn superpixel_class_histogram(
    sp: &SuperpixelMap,
    labels: &LabelGrid,
) -> Result<Vec<ClassCounts>> {
    let shape = labels.shape();
    sp.check_plane(&shape)?;
    let mut hist = vec![
        ClassCounts {
            counts: vec![0; shape.classes],
            ignored: 0,
        };
        sp.n()
    ];
    for (px, &id) in sp.sp_ids().iter().enumerate() {
        let v = labels.values()[px];
        let h = &mut hist[id as usize];
        if v == IGNORE {
            h.ignored += 1;
        } else {
            h.counts[v as usize] += 1;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn constant_image(h: usize, w: usize, v: f64) -> Image {
        Image::new(h, w, vec![v; h * w]).unwrap()
    }

    fn two_tone(h: usize, w: usize) -> Image {
        let data = (0..h * w)
            .map(|px| if px % w < w / 2 { 0.0 } else { 1.0 })
            .collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn constant_image_tiles_near_regularly() {
        let img = constant_image(8, 8, 0.5);
        let sp = slic_segment(&img, 4, 0.1, 10, 0).unwrap();
        assert_eq!(sp.n(), 4);
        assert!(sp.all_connected());
        for &size in sp.sizes() {
            assert!((8..=24).contains(&size), "size {size} outside 16 +/- 8");
        }
        assert_eq!(sp.sizes().iter().sum::<usize>(), 64);
    }

    #[test]
    fn degenerate_n_gives_singletons() {
        let img = constant_image(2, 2, 0.3);
        let sp = slic_segment(&img, 4, 0.1, 10, 0).unwrap();
        assert_eq!(sp.n(), 4);
        assert!(sp.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn two_tone_boundary_respects_intensity_step() {
        let img = two_tone(8, 8);
        let sp = slic_segment(&img, 2, 0.1, 10, 0).unwrap();
        // no superpixel may contain pixels from both halves
        for j in 0..sp.n() {
            let left = sp.members(j).iter().any(|&px| px % 8 < 4);
            let right = sp.members(j).iter().any(|&px| px % 8 >= 4);
            assert!(!(left && right), "superpixel {j} straddles the step");
        }
    }

    #[test]
    fn n_above_pixel_count_is_an_error() {
        let img = constant_image(2, 2, 0.0);
        assert!(slic_segment(&img, 5, 0.1, 10, 0).is_err());
        assert!(slic_segment(&img, 4, 0.0, 10, 0).is_err());
        assert!(slic_segment(&img, 4, 0.1, 0, 0).is_err());
    }

    #[test]
    fn deterministic_across_runs() {
        let data: Vec<f64> = (0..256).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let img = Image::new(16, 16, data).unwrap();
        let a = slic_segment(&img, 9, 0.1, 10, 1).unwrap();
        let b = slic_segment(&img, 9, 0.1, 10, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_all_ignore() {
        let img = constant_image(4, 4, 0.5);
        let sp = slic_segment(&img, 4, 0.1, 5, 0).unwrap();
        let shape = GridShape::new(4, 4, 3).unwrap();
        let labels = LabelGrid::filled(shape, IGNORE).unwrap();
        let hist = superpixel_class_histogram(&sp, &labels).unwrap();
        for (j, h) in hist.iter().enumerate() {
            assert!(h.counts.iter().all(|&c| c == 0));
            assert_eq!(h.ignored, sp.sizes()[j]);
        }
    }

    #[test]
    fn histogram_exhaustive_count() {
        let sp = SuperpixelMap::from_sp_grid(2, 2, vec![0, 0, 0, 0]).unwrap();
        let shape = GridShape::new(2, 2, 2).unwrap();
        let labels = LabelGrid::from_values(shape, vec![1, 1, 0, IGNORE]).unwrap();
        let hist = superpixel_class_histogram(&sp, &labels).unwrap();
        assert_eq!(hist[0].counts, vec![1, 2]);
        assert_eq!(hist[0].ignored, 1);
    }

    #[test]
    fn histogram_rows_sum_to_sizes() {
        let data: Vec<f64> = (0..144).map(|i| ((i * 53) % 97) as f64 / 97.0).collect();
        let img = Image::new(12, 12, data).unwrap();
        let sp = slic_segment(&img, 6, 0.1, 10, 0).unwrap();
        let shape = GridShape::new(12, 12, 4).unwrap();
        let labels = LabelGrid::from_values(
            shape,
            (0..144)
                .map(|i| if i % 5 == 0 { IGNORE } else { (i % 4) as u8 })
                .collect(),
        )
        .unwrap();
        let hist = superpixel_class_histogram(&sp, &labels).unwrap();
        for (j, h) in hist.iter().enumerate() {
            assert_eq!(h.counts.iter().sum::<usize>() + h.ignored, sp.sizes()[j]);
        }
    }

    #[test]
    fn histogram_shape_mismatch() {
        let sp = SuperpixelMap::from_sp_grid(2, 2, vec![0, 0, 1, 1]).unwrap();
        let labels = LabelGrid::filled(GridShape::new(3, 2, 2).unwrap(), 0).unwrap();
        assert!(superpixel_class_histogram(&sp, &labels).is_err());
    }

    #[test]
    fn sp_grid_must_be_dense() {
        assert!(SuperpixelMap::from_sp_grid(2, 2, vec![0, 0, 2, 2]).is_err());
    }
}
