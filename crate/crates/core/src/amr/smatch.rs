//! Triple-matching similarity: hill-climbing over injective variable
//! mappings, maximizing the number of shared triples.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AmrGraph;

pub const DEFAULT_RESTARTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_triples: usize,
    /// Each variable of the first graph with its image in the second.
    pub alignment: Vec<(String, Option<String>)>,
}

impl SmatchScore {
    pub(crate) fn from_counts(matched: usize, test: usize, gold: usize, alignment: Vec<(String, Option<String>)>) -> Self {
        let precision = if test == 0 { 0.0 } else { matched as f64 / test as f64 };
        let recall = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, matched_triples: matched, alignment }
    }
}

/// Match counts for one ordered graph pair, indexed by variable position.
pub(crate) struct Problem {
    n1: usize,
    n2: usize,
    /// Instance, attribute and self-loop matches for mapping i to j.
    single: Vec<u32>,
    /// Non-loop relations of the first graph incident to each variable:
    /// (other endpoint, role, this variable is the source).
    incident: Vec<Vec<(usize, u32, bool)>>,
    rel2: HashSet<(usize, u32, usize)>,
}

impl Problem {
    pub(crate) fn new(g1: &AmrGraph, g2: &AmrGraph) -> Self {
        let (n1, n2) = (g1.variables().len(), g2.variables().len());
        let mut roles: HashMap<String, u32> = HashMap::new();
        let mut role_id = |r: &str| -> u32 {
            let next = roles.len() as u32;
            *roles.entry(r.to_string()).or_insert(next)
        };
        let mut single = vec![0u32; n1 * n2];
        for i in 0..n1 {
            for j in 0..n2 {
                single[i * n2 + j] = (g1.concepts()[i] == g2.concepts()[j]) as u32;
            }
        }
        let mut attrs2: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
        for (s, r, v) in g2.attributes_raw() {
            attrs2.entry((r.as_str(), v.as_str())).or_default().push(*s);
        }
        for (i, r, v) in g1.attributes_raw() {
            for &j in attrs2.get(&(r.as_str(), v.as_str())).map(Vec::as_slice).unwrap_or(&[]) {
                single[i * n2 + j] += 1;
            }
        }
        let mut rel2 = HashSet::new();
        let mut loops2: HashMap<u32, Vec<usize>> = HashMap::new();
        for (s, r, t) in g2.relations_raw() {
            let r = role_id(r);
            if s == t {
                loops2.entry(r).or_default().push(*s);
            } else {
                rel2.insert((*s, r, *t));
            }
        }
        let mut incident = vec![Vec::new(); n1];
        for (s, r, t) in g1.relations_raw() {
            let r = role_id(r);
            if s == t {
                for &j in loops2.get(&r).map(Vec::as_slice).unwrap_or(&[]) {
                    single[s * n2 + j] += 1;
                }
            } else {
                incident[*s].push((*t, r, true));
                incident[*t].push((*s, r, false));
            }
        }
        Self { n1, n2, single, incident, rel2 }
    }

    fn single(&self, i: usize, j: Option<usize>) -> i64 {
        j.map_or(0, |j| self.single[i * self.n2 + j] as i64)
    }

    fn rel_hit(&self, a: Option<usize>, role: u32, b: Option<usize>) -> i64 {
        match (a, b) {
            (Some(a), Some(b)) => self.rel2.contains(&(a, role, b)) as i64,
            _ => 0,
        }
    }

    /// Change in score if variable `i` is remapped to `to`, others fixed.
    fn delta(&self, m: &[Option<usize>], i: usize, to: Option<usize>) -> i64 {
        let from = m[i];
        let mut d = self.single(i, to) - self.single(i, from);
        for &(k, role, outgoing) in &self.incident[i] {
            let mk = m[k];
            d += if outgoing {
                self.rel_hit(to, role, mk) - self.rel_hit(from, role, mk)
            } else {
                self.rel_hit(mk, role, to) - self.rel_hit(mk, role, from)
            };
        }
        d
    }

    pub(crate) fn score(&self, m: &[Option<usize>]) -> i64 {
        let mut total: i64 = (0..self.n1).map(|i| self.single(i, m[i])).sum();
        for (i, inc) in self.incident.iter().enumerate() {
            for &(k, role, outgoing) in inc {
                if outgoing {
                    total += self.rel_hit(m[i], role, m[k]);
                }
            }
        }
        total
    }

    /// Steepest-ascent hill climbing over remaps to free targets and swaps.
    fn climb(&self, m: &mut [Option<usize>]) -> i64 {
        let mut used = vec![false; self.n2];
        for j in m.iter().flatten() {
            used[*j] = true;
        }
        let mut score = self.score(m);
        loop {
            let mut best: (i64, Option<(usize, usize, bool)>) = (0, None);
            for i in 0..self.n1 {
                for (j, &taken) in used.iter().enumerate() {
                    if !taken {
                        let d = self.delta(m, i, Some(j));
                        if d > best.0 {
                            best = (d, Some((i, j, false)));
                        }
                    }
                }
            }
            for i in 0..self.n1 {
                for k in i + 1..self.n1 {
                    if m[i].is_none() && m[k].is_none() {
                        continue;
                    }
                    let d = self.swap_delta(m, i, k);
                    if d > best.0 {
                        best = (d, Some((i, k, true)));
                    }
                }
            }
            match best.1 {
                None => return score,
                Some((i, k, true)) => {
                    m.swap(i, k);
                }
                Some((i, j, false)) => {
                    if let Some(old) = m[i] {
                        used[old] = false;
                    }
                    used[j] = true;
                    m[i] = Some(j);
                }
            }
            score += best.0;
        }
    }

    fn swap_delta(&self, m: &mut [Option<usize>], i: usize, k: usize) -> i64 {
        let (a, b) = (m[i], m[k]);
        let d1 = self.delta(m, i, b);
        m[i] = b;
        let d2 = self.delta(m, k, a);
        m[i] = a;
        d1 + d2
    }

    fn smart_init(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut m = vec![None; self.n1];
        let mut used = vec![false; self.n2];
        for (i, slot) in m.iter_mut().enumerate() {
            let best = (0..self.n2)
                .filter(|&j| !used[j] && self.single[i * self.n2 + j] > 0)
                .max_by_key(|&j| (self.single[i * self.n2 + j], std::cmp::Reverse(j)));
            if let Some(j) = best {
                used[j] = true;
                *slot = Some(j);
            }
        }
        let mut free: Vec<usize> = (0..self.n2).filter(|&j| !used[j]).collect();
        free.shuffle(rng);
        for slot in m.iter_mut().filter(|s| s.is_none()) {
            match free.pop() {
                Some(j) => *slot = Some(j),
                None => break,
            }
        }
        m
    }

    fn random_init(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut slots: Vec<Option<usize>> = (0..self.n2).map(Some).collect();
        slots.resize(self.n1.max(self.n2), None);
        slots.shuffle(rng);
        slots.truncate(self.n1);
        slots
    }

    /// Best mapping over one smart start and `restarts` random starts.
    pub(crate) fn solve(&self, restarts: usize, seed: u64, upper_bound: usize) -> (usize, Vec<Option<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best_m = self.smart_init(&mut rng);
        let mut best = self.climb(&mut best_m);
        for _ in 0..restarts {
            if best as usize >= upper_bound {
                break;
            }
            let mut m = self.random_init(&mut rng);
            let s = self.climb(&mut m);
            if s > best {
                best = s;
                best_m = m;
            }
        }
        (best as usize, best_m)
    }
}

/// Triple-matching precision/recall/F1 of `g1` (test) against `g2` (gold).
/// Deterministic for a given seed, and symmetric: the search always runs in
/// a canonical direction so swapping the graphs only swaps P and R.
pub fn smatch(g1: &AmrGraph, g2: &AmrGraph, restarts: usize, seed: u64) -> SmatchScore {
    let (t1, t2) = (g1.triple_count(), g2.triple_count());
    let upper = t1.min(t2);
    let forward = g1.to_penman() <= g2.to_penman();
    let alignment: Vec<(String, Option<String>)>;
    let matched;
    if forward {
        let (m, map) = Problem::new(g1, g2).solve(restarts, seed, upper);
        matched = m;
        alignment = g1
            .variables()
            .iter()
            .zip(map)
            .map(|(v, j)| (v.clone(), j.map(|j| g2.variables()[j].clone())))
            .collect();
    } else {
        let (m, map) = Problem::new(g2, g1).solve(restarts, seed, upper);
        matched = m;
        let mut inverse = vec![None; g1.variables().len()];
        for (j, i) in map.iter().enumerate() {
            if let Some(i) = i {
                inverse[*i] = Some(g2.variables()[j].clone());
            }
        }
        alignment = g1.variables().iter().cloned().zip(inverse).collect();
    }
    SmatchScore::from_counts(matched, t1, t2, alignment)
}

#[cfg(test)]
mod tests {
    use super::super::parse_graph;
    use super::super::tests::random_graph;
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive optimum over all injective partial mappings.
    pub(crate) fn exhaustive(g1: &AmrGraph, g2: &AmrGraph) -> usize {
        fn rec(p: &Problem, i: usize, m: &mut Vec<Option<usize>>, used: &mut [bool], best: &mut i64) {
            if i == p.n1 {
                *best = (*best).max(p.score(m));
                return;
            }
            m.push(None);
            rec(p, i + 1, m, used, best);
            m.pop();
            for j in 0..p.n2 {
                if !used[j] {
                    used[j] = true;
                    m.push(Some(j));
                    rec(p, i + 1, m, used, best);
                    m.pop();
                    used[j] = false;
                }
            }
        }
        let p = Problem::new(g1, g2);
        let mut best = 0;
        rec(&p, 0, &mut Vec::new(), &mut vec![false; p.n2], &mut best);
        best as usize
    }

    /// Independent triple-set count for a mapping, by renaming variables.
    fn count_by_renaming(g1: &AmrGraph, g2: &AmrGraph, alignment: &[(String, Option<String>)]) -> usize {
        let rename: HashMap<&str, &str> =
            alignment.iter().filter_map(|(a, b)| b.as_deref().map(|b| (a.as_str(), b))).collect();
        let gold = g2.triple_set();
        g1.triple_set()
            .into_iter()
            .filter(|(s, r, t)| {
                let Some(s2) = rename.get(s.as_str()) else { return false };
                let t2 = if r == super::super::INSTANCE || !g1.variables().contains(t) {
                    t.clone()
                } else {
                    match rename.get(t.as_str()) {
                        Some(t2) => t2.to_string(),
                        None => return false,
                    }
                };
                gold.contains(&(s2.to_string(), r.clone(), t2))
            })
            .count()
    }

    #[test]
    fn identity_scores_one() {
        let g = parse_graph("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b) :polarity -)").unwrap();
        let s = smatch(&g, &g, DEFAULT_RESTARTS, 0);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert_eq!(s.matched_triples, g.triple_count());
    }

    #[test]
    fn disjoint_vocabularies_score_zero() {
        let a = parse_graph("(a / alpha :ARG0 (b / beta))").unwrap();
        let b = parse_graph("(x / gamma :mod (y / delta))").unwrap();
        let s = smatch(&a, &b, DEFAULT_RESTARTS, 0);
        assert_eq!((s.f1, s.matched_triples), (0.0, 0));
    }

    #[test]
    fn renamed_variables_still_match() {
        let a = parse_graph("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))").unwrap();
        let b = parse_graph("(x / want-01 :ARG1 (y / go-02 :ARG0 (z / boy)) :ARG0 z)").unwrap();
        let s = smatch(&a, &b, DEFAULT_RESTARTS, 3);
        assert_eq!(s.f1, 1.0);
        assert!(s.alignment.contains(&("b".into(), Some("z".into()))));
    }

    #[test]
    fn partial_overlap_arithmetic() {
        // 4 triples vs 3 triples; the instance and ARG0 of `boy` differ.
        let a = parse_graph("(w / want-01 :ARG0 (b / boy) :polarity -)").unwrap();
        let b = parse_graph("(w / want-01 :ARG0 (g / girl))").unwrap();
        let s = smatch(&a, &b, DEFAULT_RESTARTS, 0);
        assert_eq!(s.matched_triples, 2);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn hill_climbing_agrees_with_exhaustive() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut equal = 0;
        for trial in 0..50 {
            let g1 = random_graph(&mut rng, 6);
            let g2 = random_graph(&mut rng, 6);
            let opt = exhaustive(&g1, &g2).max(exhaustive(&g2, &g1));
            let s = smatch(&g1, &g2, DEFAULT_RESTARTS, trial);
            assert!(s.matched_triples <= opt);
            equal += (s.matched_triples == opt) as usize;
        }
        assert!(equal >= 48, "{equal}/50");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn invariants(seed in any::<u64>(), s in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g1 = random_graph(&mut rng, 7);
            let g2 = random_graph(&mut rng, 7);
            let a = smatch(&g1, &g2, DEFAULT_RESTARTS, s);
            let b = smatch(&g2, &g1, DEFAULT_RESTARTS, s);
            prop_assert!((a.f1 - b.f1).abs() < 1e-9);
            prop_assert!((a.precision - b.recall).abs() < 1e-9);
            prop_assert!(a.matched_triples <= g1.triple_count().min(g2.triple_count()));
            prop_assert_eq!(count_by_renaming(&g1, &g2, &a.alignment), a.matched_triples);
            for v in [a.precision, a.recall, a.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let self_score = smatch(&g1, &g1, DEFAULT_RESTARTS, s);
            prop_assert_eq!(self_score.f1, 1.0);
        }

        #[test]
        fn shared_extra_triple_never_hurts(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g1 = random_graph(&mut rng, 5);
            let g2 = random_graph(&mut rng, 5);
            let base = exhaustive(&g1, &g2);
            let extend = |g: &AmrGraph| {
                let text = g.to_penman();
                let (head, tail) = text.split_at(text.len() - 1);
                parse_graph(&format!("{head} :extra \"shared\"{tail}")).unwrap()
            };
            let (h1, h2) = (extend(&g1), extend(&g2));
            prop_assert!(exhaustive(&h1, &h2) >= base);
        }
    }

    proptest! {
        // Fixed seed: hill climbing is only near-optimal, so the search-level
        // check runs on a reproducible sample.
        #![proptest_config(ProptestConfig {
            cases: 128,
            rng_seed: proptest::test_runner::RngSeed::Fixed(7),
            ..ProptestConfig::default()
        })]
        #[test]
        fn shared_extra_triple_never_hurts_search(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g1 = random_graph(&mut rng, 5);
            let g2 = random_graph(&mut rng, 5);
            let extend = |g: &AmrGraph| {
                let text = g.to_penman();
                let (head, tail) = text.split_at(text.len() - 1);
                parse_graph(&format!("{head} :extra \"shared\"{tail}")).unwrap()
            };
            let before = smatch(&g1, &g2, DEFAULT_RESTARTS, seed).matched_triples;
            prop_assert!(smatch(&extend(&g1), &extend(&g2), DEFAULT_RESTARTS, seed).matched_triples >= before);
        }
    }
}
