//! Fixtures shared by the benchmarks.

use dualtok::generate::{tokenize_item, CodeTrie, Generator, GeneratorConfig, ItemTokenLayout, TokenVocab};
use dualtok::numerics::{seeded_rng, ParamStore};
use rand::Rng;

/// A randomly initialised generator with a trie over `items` random items.
pub struct DecodeFixture {
    pub store: ParamStore,
    pub generator: Generator,
    pub layouts: Vec<ItemTokenLayout>,
    pub trie: CodeTrie,
}

impl DecodeFixture {
    pub fn new(items: usize, levels: usize, codebook_size: usize, dim: usize) -> Self {
        let mut rng = seeded_rng(0, 0xBE);
        let vocab = TokenVocab::new(levels, codebook_size).expect("valid vocab");
        let mut store = ParamStore::new();
        let config = GeneratorConfig {
            layers: 2,
            heads: 4,
            dim,
            context_items: 20,
        };
        let generator = Generator::new(&mut store, vocab.clone(), config, &mut rng).expect("generator");
        let layouts: Vec<ItemTokenLayout> = (0..items)
            .map(|_| {
                let col: Vec<usize> = (0..levels).map(|_| rng.random_range(0..codebook_size)).collect();
                let sem: Vec<usize> = (0..levels).map(|_| rng.random_range(0..codebook_size)).collect();
                let l_col = rng.random_range(0..=levels);
                tokenize_item(&col, &sem, (l_col, levels - l_col), &vocab).expect("layout")
            })
            .collect();
        let rank: Vec<usize> = (0..items).collect();
        let trie = CodeTrie::build(&layouts, &rank).expect("trie");
        DecodeFixture {
            store,
            generator,
            layouts,
            trie,
        }
    }

    pub fn history(&self, len: usize) -> Vec<&ItemTokenLayout> {
        self.layouts.iter().take(len).collect()
    }
}
