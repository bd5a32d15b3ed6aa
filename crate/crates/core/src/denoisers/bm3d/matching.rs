//! Block matching: grouping patches similar to a reference patch.

use crate::error::{Error, Result};
use crate::raster::Image;

use super::Bm3dParams;

/// A stack of similar patches, reference first.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub reference_position: (usize, usize),
    /// Patch origins `(row, col)`, aligned with the stack.
    pub member_positions: Vec<(usize, usize)>,
    /// Normalized squared distance of each member to the reference.
    pub distances: Vec<f64>,
    pub patch_size: usize,
    /// `group_size` patches of `patch_size^2` values, each row-major.
    pub stack: Vec<f64>,
}

impl PatchGroup {
    pub fn group_size(&self) -> usize {
        self.member_positions.len()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let p2 = self.patch_size * self.patch_size;
        &self.stack[i * p2..(i + 1) * p2]
    }
}

/// Copies the patches at `positions` out of `img`.
pub fn extract_stack(img: &Image, positions: &[(usize, usize)], patch_size: usize) -> Vec<f64> {
    let mut stack = Vec::with_capacity(positions.len() * patch_size * patch_size);
    let w = img.width();
    let px = img.pixels();
    for &(r, c) in positions {
        for dr in 0..patch_size {
            let start = (r + dr) * w + c;
            stack.extend_from_slice(&px[start..start + patch_size]);
        }
    }
    stack
}

/// Sum of squared differences between the patches at `a` and `b`, divided by
/// the number of pixels in a patch.
pub fn patch_distance(img: &Image, a: (usize, usize), b: (usize, usize), patch_size: usize) -> f64 {
    let w = img.width();
    let px = img.pixels();
    let mut sum = 0.0;
    for dr in 0..patch_size {
        let ra = &px[(a.0 + dr) * w + a.1..][..patch_size];
        let rb = &px[(b.0 + dr) * w + b.1..][..patch_size];
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            sum += d * d;
        }
    }
    sum / (patch_size * patch_size) as f64
}

/// Largest power of two not exceeding `n` (`n >= 1`).
pub fn floor_power_of_two(n: usize) -> usize {
    debug_assert!(n >= 1);
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Patch origins along one axis: `0, step, 2*step, ...` plus `len - patch`
/// when the grid would otherwise miss the last rows/columns.
pub fn reference_grid(len: usize, patch_size: usize, step: usize) -> Vec<usize> {
    let last = len - patch_size;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if *v.last().expect("non-empty range") != last {
        v.push(last);
    }
    v
}

/// Candidate offsets on the `step` lattice through `pos`, limited to the
/// search window and the valid origin range `0..=last`.
fn candidate_axis(pos: usize, last: usize, half_window: usize, step: usize) -> Vec<usize> {
    let lo = pos.saturating_sub(half_window);
    let hi = (pos + half_window).min(last);
    let first = pos - (pos - lo) / step * step;
    (first..=hi).step_by(step).collect()
}

/// Groups patches similar to the one at `ref_pos`.
///
/// Candidates lie on the `step` lattice through `ref_pos` inside the search
/// window. Those with distance strictly below `threshold` are kept, sorted by
/// distance then row-major position; the reference always leads. The group is
/// truncated to the largest power of two not above `max_matches`.
pub fn block_match(
    img: &Image,
    ref_pos: (usize, usize),
    params: &Bm3dParams,
    threshold: f64,
) -> Result<PatchGroup> {
    let positions = match_positions(img, ref_pos, params, threshold)?;
    let (member_positions, distances): (Vec<_>, Vec<_>) = positions.into_iter().unzip();
    let stack = extract_stack(img, &member_positions, params.patch_size);
    Ok(PatchGroup {
        reference_position: ref_pos,
        member_positions,
        distances,
        patch_size: params.patch_size,
        stack,
    })
}

pub(crate) fn match_positions(
    img: &Image,
    ref_pos: (usize, usize),
    params: &Bm3dParams,
    threshold: f64,
) -> Result<Vec<((usize, usize), f64)>> {
    let p = params.patch_size;
    let (w, h) = (img.width(), img.height());
    if w < p || h < p {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: p,
        });
    }
    let (last_r, last_c) = (h - p, w - p);
    if ref_pos.0 > last_r || ref_pos.1 > last_c {
        return Err(Error::InvalidParameter(format!(
            "reference patch at {ref_pos:?} does not fit in {w}x{h}"
        )));
    }
    let half = params.search_window / 2;
    let rows = candidate_axis(ref_pos.0, last_r, half, params.step);
    let cols = candidate_axis(ref_pos.1, last_c, half, params.step);

    let mut found: Vec<((usize, usize), f64)> = Vec::with_capacity(rows.len() * cols.len());
    found.push((ref_pos, 0.0));
    for &r in &rows {
        for &c in &cols {
            if (r, c) == ref_pos {
                continue;
            }
            let d = patch_distance(img, ref_pos, (r, c), p);
            if d < threshold {
                found.push(((r, c), d));
            }
        }
    }
    found[1..].sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let keep = floor_power_of_two(found.len().min(params.max_matches));
    found.truncate(keep);
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::awgn;

    #[test]
    fn grid_covers_every_origin_range() {
        assert_eq!(reference_grid(16, 8, 3), vec![0, 3, 6, 8]);
        assert_eq!(reference_grid(14, 8, 3), vec![0, 3, 6]);
        assert_eq!(reference_grid(8, 8, 3), vec![0]);
        for len in 8..60 {
            let g = reference_grid(len, 8, 3);
            let mut covered = vec![false; len];
            for &o in &g {
                covered[o..o + 8].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.iter().all(|&c| c), "len {len}");
        }
    }

    #[test]
    fn power_of_two_floor() {
        let got: Vec<usize> = (1..=17).map(floor_power_of_two).collect();
        assert_eq!(got, [1, 2, 2, 4, 4, 4, 4, 8, 8, 8, 8, 8, 8, 8, 8, 16, 16]);
    }

    #[test]
    fn candidates_stay_on_lattice_and_in_window() {
        let c = candidate_axis(20, 100, 19, 3);
        assert!(c.contains(&20));
        assert!(c.iter().all(|&x| (x as i64 - 20).rem_euclid(3) == 0));
        assert_eq!((*c.first().unwrap(), *c.last().unwrap()), (2, 38));
        assert_eq!(candidate_axis(1, 10, 19, 3), vec![1, 4, 7, 10]);
    }

    #[test]
    fn constant_image_saturates() {
        let img = Image::constant(64, 64, 77.0);
        let params = Bm3dParams::new(25.0);
        let g = block_match(&img, (27, 27), &params, params.match_threshold_hard).unwrap();
        assert_eq!(g.group_size(), params.max_matches);
        assert!(g.distances.iter().all(|&d| d == 0.0));
        assert_eq!(g.member_positions[0], (27, 27));
        // ties resolved by row-major position
        let mut sorted = g.member_positions[1..].to_vec();
        sorted.sort();
        assert_eq!(sorted, g.member_positions[1..]);
    }

    #[test]
    fn single_duplicate_forms_pair() {
        // 3x3 cells with hashed levels, plus one copy of the reference patch;
        // no other lattice patch comes within the threshold
        let params = Bm3dParams::new(25.0);
        let img = Image::from_fn(48, 48, |r, c| {
            (crate::seed::splitmix64(((r / 3) * 16 + c / 3) as u64) % 256) as f64
        });
        let mut px = img.pixels().to_vec();
        let (src, dst) = ((9usize, 9usize), (21usize, 27usize));
        for dr in 0..8 {
            for dc in 0..8 {
                px[(dst.0 + dr) * 48 + dst.1 + dc] = px[(src.0 + dr) * 48 + src.1 + dc];
            }
        }
        let img = Image::new(48, 48, px).unwrap();
        // brute-force: the duplicate is the only candidate under threshold 1
        let mut under = 0;
        for r in (0..=40).filter(|r| (*r as i64 - 9).rem_euclid(3) == 0) {
            for c in (0..=40).filter(|c| (*c as i64 - 9).rem_euclid(3) == 0) {
                if (r, c) != src && patch_distance(&img, src, (r, c), 8) < 1.0 {
                    under += 1;
                }
            }
        }
        assert_eq!(under, 1);
        let g = block_match(&img, src, &params, 1.0).unwrap();
        assert_eq!(g.member_positions, vec![src, dst]);
        assert_eq!(g.patch(0), g.patch(1));
    }

    #[test]
    fn zero_threshold_keeps_reference_only() {
        let img = awgn(&Image::constant(40, 40, 128.0), 20.0, 5).unwrap();
        let g = block_match(&img, (12, 12), &Bm3dParams::new(20.0), 0.0).unwrap();
        assert_eq!(g.member_positions, vec![(12, 12)]);
        assert_eq!(g.stack.len(), 64);
    }

    #[test]
    fn out_of_bounds_reference() {
        let img = Image::constant(20, 20, 1.0);
        let p = Bm3dParams::new(10.0);
        assert!(block_match(&img, (13, 0), &p, 10.0).is_err());
        assert!(block_match(&Image::constant(6, 20, 0.0), (0, 0), &p, 10.0).is_err());
    }
}
