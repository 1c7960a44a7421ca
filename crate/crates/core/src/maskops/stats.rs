use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataio::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForegroundStats {
    pub pixel_count: usize,
    pub fraction: f64,
    /// 8-connected components of foreground pixels.
    pub component_count: usize,
}

pub fn foreground_stats(mask: &BinaryMask) -> ForegroundStats {
    let pixel_count = mask.count_ones();
    let fraction = if mask.is_empty() {
        0.0
    } else {
        pixel_count as f64 / mask.len() as f64
    };
    ForegroundStats {
        pixel_count,
        fraction,
        component_count: count_components(mask),
    }
}

fn count_components(mask: &BinaryMask) -> usize {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let data = mask.as_slice();
    let mut seen = vec![false; data.len()];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..data.len() {
        if data[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if data[j] == 1 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask() {
        let s = foreground_stats(&BinaryMask::zeros("m", 10, 10));
        assert_eq!((s.pixel_count, s.fraction, s.component_count), (0, 0.0, 0));
    }

    #[test]
    fn solid_square() {
        let m = BinaryMask::from_fn("m", 10, 10, |x, y| (3..6).contains(&x) && (4..7).contains(&y));
        let s = foreground_stats(&m);
        assert_eq!(s.pixel_count, 9);
        assert!((s.fraction - 0.09).abs() < 1e-12);
        assert_eq!(s.component_count, 1);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let m = BinaryMask::from_fn("m", 4, 4, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2));
        assert_eq!(foreground_stats(&m).component_count, 1);
    }

    #[test]
    fn separated_blobs_and_edges() {
        let m = BinaryMask::from_fn("m", 6, 3, |x, _| x == 0 || x == 5);
        assert_eq!(foreground_stats(&m).component_count, 2);
        let full = BinaryMask::ones("m", 7, 5);
        assert_eq!(foreground_stats(&full).component_count, 1);
    }
}
