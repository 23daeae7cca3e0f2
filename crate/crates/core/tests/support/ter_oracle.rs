//! Exhaustive TER oracle for short segments. Test-only; shares nothing with
//! the greedy implementation except the Levenshtein distance.

/// Minimum of `shifts + word edit distance` over every sequence of at most
/// `depth` block moves, where a move takes any contiguous block of the
/// hypothesis and reinserts it at any other position.
pub fn brute_force_ter_edits(hyp: &[&str], reference: &[&str], depth: usize) -> usize {
    let mut best = levenshtein(hyp, reference);
    let mut frontier = vec![hyp.to_vec()];
    for d in 1..=depth {
        let mut next = Vec::new();
        for cur in &frontier {
            for start in 0..cur.len() {
                for len in 1..=cur.len() - start {
                    let mut rest: Vec<&str> = cur[..start].to_vec();
                    rest.extend_from_slice(&cur[start + len..]);
                    for at in 0..=rest.len() {
                        if at == start {
                            continue;
                        }
                        let mut moved = rest.clone();
                        moved.splice(at..at, cur[start..start + len].iter().copied());
                        best = best.min(d + levenshtein(&moved, reference));
                        next.push(moved);
                    }
                }
            }
        }
        next.sort();
        next.dedup();
        frontier = next;
    }
    best
}

/// Full-matrix Levenshtein distance.
pub fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        d[i][0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Random segment of 1..=6 tokens over a four-word vocabulary.
pub fn random_segment<R: rand::Rng>(rng: &mut R) -> Vec<&'static str> {
    const VOCAB: [&str; 4] = ["a", "b", "c", "d"];
    let len = rng.gen_range(1..=6);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect()
}
