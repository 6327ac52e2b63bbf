use serde::{Deserialize, Serialize};

/// Edit-operation counts of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// 100·(S+D+I)/N, undefined for an empty reference.
    pub fn wer_percent(&self) -> Option<f64> {
        (self.ref_words > 0).then(|| 100.0 * self.errors() as f64 / self.ref_words as f64)
    }

    pub fn merge(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_words += other.ref_words;
    }
}

/// Lower-cased whitespace tokens.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

pub fn wer(reference: &str, hypothesis: &str) -> ErrorCounts {
    let r = normalize_words(reference);
    let h = normalize_words(hypothesis);
    align(&r, &h)
}

#[derive(Clone, Copy)]
struct Cell {
    cost: usize,
    s: usize,
    i: usize,
    d: usize,
}

impl Cell {
    fn key(&self) -> (usize, usize) {
        (self.cost, self.i + self.d)
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one
/// with the most substitutions wins; remaining ties prefer substitution,
/// then insertion, then deletion.
pub fn align<T: PartialEq>(r: &[T], h: &[T]) -> ErrorCounts {
    let (n, m) = (r.len(), h.len());
    let mut prev: Vec<Cell> = (0..=m)
        .map(|j| Cell {
            cost: j,
            s: 0,
            i: j,
            d: 0,
        })
        .collect();
    for ri in 1..=n {
        let mut cur = Vec::with_capacity(m + 1);
        cur.push(Cell {
            cost: ri,
            s: 0,
            i: 0,
            d: ri,
        });
        for hj in 1..=m {
            let diag = prev[hj - 1];
            let same = r[ri - 1] == h[hj - 1];
            let sub = Cell {
                cost: diag.cost + (!same) as usize,
                s: diag.s + (!same) as usize,
                ..diag
            };
            let left = cur[hj - 1];
            let ins = Cell {
                cost: left.cost + 1,
                i: left.i + 1,
                ..left
            };
            let up = prev[hj];
            let del = Cell {
                cost: up.cost + 1,
                d: up.d + 1,
                ..up
            };
            let mut best = sub;
            for cand in [ins, del] {
                if cand.key() < best.key() {
                    best = cand;
                }
            }
            cur.push(best);
        }
        prev = cur;
    }
    let c = prev[m];
    ErrorCounts {
        substitutions: c.s,
        deletions: c.d,
        insertions: c.i,
        ref_words: n,
    }
}
