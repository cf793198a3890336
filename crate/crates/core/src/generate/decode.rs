use super::{CodeTrie, DecodeState, Generator, ItemTokenLayout};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct Scored<T> {
    pub value: T,
    /// Total log-probability of the generated tuple.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    /// Completed token tuples, best first.
    pub tuples: Vec<Scored<Vec<usize>>>,
    /// Top items, best first; items of one leaf share its score.
    pub items: Vec<Scored<usize>>,
}

struct Beam {
    tokens: Vec<usize>,
    node: usize,
    score: f64,
    state: DecodeState,
}

/// Beam search over the trie for the item following `history`, returning up
/// to `k` items. Candidate tokens at each slot are the children of the beam's
/// trie node, scored by the unrenormalised log-probability.
pub fn generate_items(
    generator: &Generator,
    store: &ParamStore,
    history: &[&ItemTokenLayout],
    trie: &CodeTrie,
    beam_width: usize,
    k: usize,
) -> Result<BeamOutput> {
    if history.is_empty() {
        return Err(Error::Contract("generation needs a non-empty history".into()));
    }
    if beam_width < k || k == 0 {
        return Err(Error::Contract(format!("beam width {beam_width} must be at least k = {k} ≥ 1")));
    }
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        node: trie.root(),
        score: 0.0,
        state: generator.start(store, history),
    }];
    for slot in 0..trie.depth() {
        let mut cand: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (b, beam) in beams.iter().enumerate() {
            for (tok, child) in trie.children(beam.node) {
                cand.push((beam.score + beam.state.log_probs[tok], b, tok, child));
            }
        }
        assert!(!cand.is_empty(), "trie node without children");
        cand.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        cand.truncate(beam_width);
        let last = slot + 1 == trie.depth();
        beams = cand
            .into_iter()
            .map(|(score, b, tok, child)| {
                let parent = &beams[b];
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                let mut state = parent.state.clone();
                if !last {
                    generator.advance(store, &mut state, tok);
                }
                Beam {
                    tokens,
                    node: child,
                    score,
                    state,
                }
            })
            .collect();
    }
    let mut items = Vec::new();
    for beam in &beams {
        for &item in trie.items(beam.node) {
            if items.len() < k {
                items.push(Scored { value: item, score: beam.score });
            }
        }
    }
    Ok(BeamOutput {
        tuples: beams
            .into_iter()
            .map(|b| Scored {
                value: b.tokens,
                score: b.score,
            })
            .collect(),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{tokenize_item, GeneratorConfig, TokenVocab};
    use crate::numerics::seeded_rng;

    fn model(levels: usize, k: usize) -> (ParamStore, Generator) {
        let mut rng = seeded_rng(4, 4);
        let mut store = ParamStore::new();
        let cfg = GeneratorConfig {
            layers: 1,
            heads: 2,
            dim: 8,
            context_items: 5,
        };
        let g = Generator::new(&mut store, TokenVocab::new(levels, k).unwrap(), cfg, &mut rng).unwrap();
        (store, g)
    }

    #[test]
    fn single_item_catalog() {
        let (store, gen) = model(2, 4);
        let lay = vec![tokenize_item(&[1, 2], &[3, 0], (1, 1), &gen.vocab).unwrap()];
        let trie = CodeTrie::build(&lay, &[0]).unwrap();
        let out = generate_items(&gen, &store, &[&lay[0]], &trie, 3, 1).unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].value, 0);
        assert!(generate_items(&gen, &store, &[], &trie, 3, 1).is_err());
        assert!(generate_items(&gen, &store, &[&lay[0]], &trie, 1, 2).is_err());
    }

    #[test]
    fn one_level_ranking_sorts_token_probabilities() {
        let (store, gen) = model(1, 6);
        // seven items over five distinct tokens: two leaves collide
        let split = [(1, 0), (0, 1), (1, 0), (0, 1), (1, 0), (1, 0), (0, 1)];
        let codes = [0, 2, 3, 5, 0, 1, 2];
        let lay: Vec<_> = codes
            .iter()
            .zip(split)
            .map(|(&c, s)| tokenize_item(&[c], &[c], s, &gen.vocab).unwrap())
            .collect();
        let rank = [6, 5, 4, 3, 2, 1, 0];
        let trie = CodeTrie::build(&lay, &rank).unwrap();
        let history = [&lay[3], &lay[1]];
        let out = generate_items(&gen, &store, &history, &trie, 7, 7).unwrap();
        let state = gen.start(&store, &history);
        let mut oracle: Vec<(f64, usize, usize)> =
            (0..7).map(|i| (state.log_probs[lay[i].tokens[0]], rank[i], i)).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let got: Vec<usize> = out.items.iter().map(|s| s.value).collect();
        let want: Vec<usize> = oracle.iter().map(|o| o.2).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn tuples_resolve_and_wider_beams_do_no_worse() {
        let (store, gen) = model(3, 4);
        let mut rng = seeded_rng(9, 9);
        use rand::Rng;
        let lay: Vec<_> = (0..30)
            .map(|_| {
                let c: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
                let s: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
                let l_col = rng.random_range(0..=3);
                tokenize_item(&c, &s, (l_col, 3 - l_col), &gen.vocab).unwrap()
            })
            .collect();
        let rank: Vec<usize> = (0..30).collect();
        let trie = CodeTrie::build(&lay, &rank).unwrap();
        for u in 0..10 {
            let history = [&lay[u], &lay[u + 10], &lay[u + 20]];
            let narrow = generate_items(&gen, &store, &history, &trie, 2, 2).unwrap();
            let wide = generate_items(&gen, &store, &history, &trie, 12, 10).unwrap();
            for t in wide.tuples.iter().chain(&narrow.tuples) {
                assert!(trie.lookup(&t.value).is_some());
            }
            assert!(wide.tuples[0].score >= narrow.tuples[0].score);
            assert_eq!(wide.items.len(), 10);
        }
    }
}
