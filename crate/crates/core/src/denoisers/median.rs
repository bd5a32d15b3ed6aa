use crate::error::{Error, Result};
use crate::raster::{quantize_value, Image};

/// Reflects `i` into `0..n` without repeating the edge sample
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`).
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Replaces each pixel by the median of its `(2r+1)^2` neighborhood, with
/// mirrored borders, then quantizes.
pub fn median_denoise(img: &Image, radius: usize) -> Result<Image> {
    if radius == 0 {
        return Err(Error::InvalidParameter("median radius must be >= 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let mut window = Vec::with_capacity(side * side);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h as isize {
        for col in 0..w as isize {
            window.clear();
            for dr in -r..=r {
                let rr = mirror(row + dr, h);
                for dc in -r..=r {
                    window.push(img.get(rr, mirror(col + dc, w)));
                }
            }
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out.push(quantize_value(*m));
        }
    }
    Image::new(w, h, out)
}
