/// Number of frequency bins.
pub const NUM_BINS: usize = 10;

/// Fraction of output tokens falling in each decile of the training
/// vocabulary ranked by frequency. Bin 0 holds the most frequent 10%.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileHistogram {
    pub fractions: [f64; NUM_BINS],
    pub counts: [usize; NUM_BINS],
    pub total: usize,
}

impl PercentileHistogram {
    /// Percentile label of bin `i` (10, 20, ..., 100).
    pub fn label(i: usize) -> usize {
        (i + 1) * 100 / NUM_BINS
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("percentile,fraction\n");
        for (i, f) in self.fractions.iter().enumerate() {
            out.push_str(&format!("{},{:.6}\n", Self::label(i), f));
        }
        out
    }
}

/// Bin of every id when ids are ranked by descending `counts`, ties by id.
pub fn frequency_bins(counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut bins = vec![0; counts.len()];
    for (rank, id) in order.into_iter().enumerate() {
        bins[id] = rank * NUM_BINS / counts.len();
    }
    bins
}

/// Histogram of output token ids against training counts indexed by id.
/// Ids outside the vocabulary count toward the total but no bin.
pub fn percentile_histogram<I>(outputs: I, counts: &[u64]) -> PercentileHistogram
where
    I: IntoIterator<Item = usize>,
{
    let bins = frequency_bins(counts);
    let mut hist = PercentileHistogram { fractions: [0.0; NUM_BINS], counts: [0; NUM_BINS], total: 0 };
    for id in outputs {
        hist.total += 1;
        if let Some(&b) = bins.get(id) {
            hist.counts[b] += 1;
        }
    }
    if hist.total > 0 {
        for i in 0..NUM_BINS {
            hist.fractions[i] = hist.counts[i] as f64 / hist.total as f64;
        }
    }
    hist
}
