//! Synthetic datasets with exact oracles.

pub mod io;
pub mod listops;
pub mod logic;
pub mod masking;
pub mod toy;
pub mod vocab;

pub use listops::{gen_listops, listops_oracle, ListopsConfig, ListopsExample};
pub use logic::{filter_systematic_split, gen_logic, logic_relation_oracle, LogicConfig, LogicExample, Relation, Split};
pub use masking::{mask_tokens, MaskedSequence, DEFAULT_MASK_RATE};
pub use toy::{gen_toy_corpus, ToyConfig, ToySentence};
pub use vocab::{build_vocab, Vocab};
