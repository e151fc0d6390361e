//! Canonical keys: one string per query up to variable renaming and atom
//! order, used to deduplicate queries reached along different expansion
//! paths.

use super::Query;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur: Vec<u8> = (0..n as u8).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// The representative of `q`'s renaming class together with its key. The
/// representative is the renaming whose printed form is smallest.
pub fn canonical_form(q: &Query) -> (Query, String) {
    let n = q.var_count();
    let mut best: Option<(Query, String)> = None;
    for perm in permutations(n) {
        let renamed = q.renamed(&perm);
        let text = key_text(&renamed);
        if best.as_ref().is_none_or(|(_, b)| text < *b) {
            best = Some((renamed, text));
        }
    }
    best.expect("at least the identity permutation")
}

/// Canonical key of `q`.
pub fn canonical(q: &Query) -> String {
    canonical_form(q).1
}

fn key_text(q: &Query) -> String {
    match q.window {
        Some(w) => format!("{q} @window {w}"),
        None => q.to_string(),
    }
}
