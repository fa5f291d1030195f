/// One column of an alignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Edit<T> {
    Hit(T),
    Sub { reference: T, hypothesis: T },
    Ins(T),
    Del(T),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult<T> {
    pub hits: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
    pub hyp_len: usize,
    /// `(S + D + I) / max(1, ref_len)`.
    pub wer: f64,
    pub alignment: Vec<Edit<T>>,
}

impl<T> AlignmentResult<T> {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimal-edit alignment with unit costs. When several alignments are
/// optimal the backtrace prefers, at each step, a diagonal move, then an
/// insertion, then a deletion.
pub fn wer<T: PartialEq + Clone>(reference: &[T], hypothesis: &[T]) -> AlignmentResult<T> {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + (reference[i - 1] != hypothesis[j - 1]) as usize;
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }

    let mut alignment = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    let (mut h, mut s, mut ins, mut del) = (0, 0, 0, 0);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + (!same) as usize {
                if same {
                    h += 1;
                    alignment.push(Edit::Hit(reference[i - 1].clone()));
                } else {
                    s += 1;
                    alignment.push(Edit::Sub {
                        reference: reference[i - 1].clone(),
                        hypothesis: hypothesis[j - 1].clone(),
                    });
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            ins += 1;
            alignment.push(Edit::Ins(hypothesis[j - 1].clone()));
            j -= 1;
        } else {
            del += 1;
            alignment.push(Edit::Del(reference[i - 1].clone()));
            i -= 1;
        }
    }
    alignment.reverse();
    AlignmentResult {
        hits: h,
        substitutions: s,
        insertions: ins,
        deletions: del,
        ref_len: n,
        hyp_len: m,
        wer: (s + ins + del) as f64 / n.max(1) as f64,
        alignment,
    }
}

/// Pooled error counts over a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusWer {
    pub hits: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
    pub utterances: usize,
}

impl CorpusWer {
    pub fn add<T>(&mut self, r: &AlignmentResult<T>) {
        self.hits += r.hits;
        self.substitutions += r.substitutions;
        self.insertions += r.insertions;
        self.deletions += r.deletions;
        self.ref_words += r.ref_len;
        self.utterances += 1;
    }

    pub fn wer(&self) -> f64 {
        (self.substitutions + self.insertions + self.deletions) as f64 / self.ref_words.max(1) as f64
    }

    /// Share of reference tokens recognised correctly.
    pub fn token_accuracy(&self) -> f64 {
        self.hits as f64 / self.ref_words.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let r = wer(&["a", "b"], &["a", "b"]);
        assert_eq!((r.hits, r.wer), (2, 0.0));
    }

    #[test]
    fn one_deletion_is_a_quarter() {
        let r = wer(&["a", "b", "c", "d"], &["a", "c", "d"]);
        assert_eq!((r.deletions, r.substitutions, r.insertions), (1, 0, 0));
        assert_eq!(r.wer, 0.25);
        assert_eq!(r.alignment[1], Edit::Del("b"));
    }

    #[test]
    fn empty_reference() {
        let r = wer::<u32>(&[], &[1, 2, 3]);
        assert_eq!((r.insertions, r.wer), (3, 3.0));
        let r = wer::<u32>(&[], &[]);
        assert_eq!(r.wer, 0.0);
    }

    #[test]
    fn substitution_preferred_over_insertion_deletion() {
        // "a" vs "b": one substitution rather than an insertion plus a deletion
        let r = wer(&["a"], &["b"]);
        assert_eq!((r.substitutions, r.insertions, r.deletions), (1, 0, 0));
        // ref "a b", hyp "b c": cost 2 either as S+S or as D+I; diagonal wins
        let r = wer(&["a", "b"], &["b", "c"]);
        assert_eq!((r.substitutions, r.insertions, r.deletions), (2, 0, 0));
    }
}
