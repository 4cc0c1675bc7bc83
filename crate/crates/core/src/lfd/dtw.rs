use super::{LfdError, PoseVec, Stream, TrajectorySample};

/// Metres of translation equivalent to one degree of rotation in the DTW
/// metric (1 deg ~ 10 mm).
pub const ROTATION_WEIGHT_M_PER_DEG: f64 = 0.01;

/// Squared weighted distance between two pose vectors.
pub fn local_distance(a: &PoseVec, b: &PoseVec) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        d += (a[k] - b[k]).powi(2);
    }
    for k in 3..6 {
        d += (ROTATION_WEIGHT_M_PER_DEG * (a[k] - b[k])).powi(2);
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Sum of local distances along the optimal path.
    pub cost: f64,
    /// `(i, j)` index pairs from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

/// Dynamic time warping of two pose sequences with steps
/// `(1,0), (0,1), (1,1)`.
pub fn dtw(a: &[PoseVec], b: &[PoseVec]) -> Result<DtwResult, LfdError> {
    if a.is_empty() || b.is_empty() {
        return Err(LfdError::EmptyStream("dtw input".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = local_distance(&a[i], &b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[at(i - 1, j - 1)]);
                }
                if i > 0 {
                    best = best.min(acc[at(i - 1, j)]);
                }
                if j > 0 {
                    best = best.min(acc[at(i, j - 1)]);
                }
                best
            };
            acc[at(i, j)] = prev + d;
        }
    }
    // Backtrack, preferring the diagonal on ties.
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut cands: Vec<(usize, usize)> = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            cands.push((i - 1, j - 1));
        }
        if i > 0 {
            cands.push((i - 1, j));
        }
        if j > 0 {
            cands.push((i, j - 1));
        }
        let next = cands
            .into_iter()
            .reduce(|x, y| if acc[at(y.0, y.1)] < acc[at(x.0, x.1)] { y } else { x })
            .expect("at least one predecessor");
        (i, j) = next;
        path.push(next);
    }
    path.reverse();
    Ok(DtwResult {
        cost: acc[at(n - 1, m - 1)],
        path,
    })
}

/// Warps every stream in `others` onto the timeline of `reference`.
///
/// Each output sample `i` carries the reference timestamp and the mean pose
/// of all samples of the other stream matched to reference index `i`.
pub fn dtw_align(reference: &Stream, others: &[Stream]) -> Result<Vec<Stream>, LfdError> {
    if others.is_empty() {
        return Err(LfdError::InvalidArgument(
            "dtw_align needs at least one stream besides the reference".into(),
        ));
    }
    let check = |s: &Stream, what: &str| {
        if s.len() < 2 {
            Err(LfdError::EmptyStream(format!(
                "{what} has {} samples, need at least 2",
                s.len()
            )))
        } else {
            Ok(())
        }
    };
    check(reference, "reference")?;
    let ref_h: Vec<PoseVec> = reference.samples.iter().map(|s| s.h).collect();
    others
        .iter()
        .enumerate()
        .map(|(idx, other)| {
            check(other, &format!("stream {idx}"))?;
            let oh: Vec<PoseVec> = other.samples.iter().map(|s| s.h).collect();
            let res = dtw(&ref_h, &oh)?;
            let mut sum = vec![PoseVec::zeros(); ref_h.len()];
            let mut count = vec![0usize; ref_h.len()];
            for &(i, j) in &res.path {
                sum[i] += oh[j];
                count[i] += 1;
            }
            let samples = reference
                .samples
                .iter()
                .zip(sum.iter().zip(&count))
                .map(|(r, (s, &c))| TrajectorySample {
                    t: r.t,
                    h: s / c as f64,
                })
                .collect();
            Ok(Stream::new(other.frame, samples))
        })
        .collect()
}
