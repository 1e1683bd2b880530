//! Lookup-table composition task: atomic tables, length-two compositions and
//! the four generalization splits.

mod io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::Rng;

pub use io::{read_dataset, write_dataset};

/// Bit width of every string in the task.
pub const STRING_LEN: usize = 3;
/// Number of distinct strings, `2^STRING_LEN`.
pub const N_STRINGS: usize = 1 << STRING_LEN;
pub const N_TABLES: usize = 8;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid binary string {0:?}")]
    BadString(String),
    #[error("{file}:{line}: unknown token {token:?}")]
    UnknownToken { file: String, line: usize, token: String },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("dataset header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A fixed-width binary string, stored as its integer value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bits(pub u16);

impl Bits {
    pub fn parse(s: &str) -> Result<Bits, TaskError> {
        if s.len() != STRING_LEN || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(TaskError::BadString(s.to_string()));
        }
        Ok(Bits(u16::from_str_radix(s, 2).expect("validated binary")))
    }

    pub fn all() -> impl Iterator<Item = Bits> {
        (0..N_STRINGS as u16).map(Bits)
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.0, width = STRING_LEN)
    }
}

/// A bijection over the binary strings of one width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    /// 1-based table number (`t1` .. `t8`).
    pub id: usize,
    pub width: usize,
    /// `mapping[x]` is the image of string `x`.
    pub mapping: Vec<u16>,
}

impl LookupTable {
    pub fn new(id: usize, width: usize, mapping: Vec<u16>) -> Result<Self, TaskError> {
        let n = 1usize << width;
        let mut seen = vec![false; n];
        if mapping.len() != n {
            return Err(TaskError::Header(format!("table t{id} has {} entries, expected {n}", mapping.len())));
        }
        for &m in &mapping {
            let slot = seen.get_mut(m as usize).ok_or_else(|| TaskError::Header(format!("table t{id} maps outside range")))?;
            if *slot {
                return Err(TaskError::Header(format!("table t{id} is not a bijection")));
            }
            *slot = true;
        }
        Ok(LookupTable { id, width, mapping })
    }

    pub fn identity(id: usize, width: usize) -> Self {
        LookupTable { id, width, mapping: (0..(1u16 << width)).collect() }
    }

    pub fn apply(&self, x: Bits) -> Bits {
        Bits(self.mapping[x.0 as usize])
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m as usize)
    }
}

/// `n` distinct random bijections over strings of `length` bits; identity and
/// duplicates are rejected and redrawn.
pub fn generate_tables(rng: &mut Rng, n: usize, length: usize) -> Vec<LookupTable> {
    let size = 1u16 << length;
    let mut tables: Vec<LookupTable> = Vec::with_capacity(n);
    while tables.len() < n {
        let mut mapping: Vec<u16> = (0..size).collect();
        rng.shuffle(&mut mapping);
        let candidate = LookupTable { id: tables.len() + 1, width: length, mapping };
        if candidate.is_identity() || tables.iter().any(|t| t.mapping == candidate.mapping) {
            continue;
        }
        tables.push(candidate);
    }
    tables
}

/// Applies `first` then `second`: `second(first(input))`.
pub fn compose(first: &LookupTable, second: &LookupTable, input: &str) -> Result<String, TaskError> {
    let x = Bits::parse(input)?;
    Ok(second.apply(first.apply(x)).to_string())
}

/// Encoder-side token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncToken {
    Bits(Bits),
    /// 1-based table id.
    Table(usize),
}

/// Decoder-side token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecToken {
    Pad,
    Sos,
    Eos,
    Bits(Bits),
}

pub const ENC_VOCAB: usize = N_STRINGS + N_TABLES;
pub const DEC_VOCAB: usize = 3 + N_STRINGS;

impl EncToken {
    /// Index order: the eight strings ascending, then `t1`..`t8`.
    pub fn index(self) -> usize {
        match self {
            EncToken::Bits(b) => b.0 as usize,
            EncToken::Table(t) => N_STRINGS + t - 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            i if i < N_STRINGS => Some(EncToken::Bits(Bits(i as u16))),
            i if i < ENC_VOCAB => Some(EncToken::Table(i - N_STRINGS + 1)),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if let Some(rest) = s.strip_prefix('t') {
            let id: usize = rest.parse().ok()?;
            return (1..=N_TABLES).contains(&id).then_some(EncToken::Table(id));
        }
        Bits::parse(s).ok().map(EncToken::Bits)
    }
}

impl fmt::Display for EncToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncToken::Bits(b) => b.fmt(f),
            EncToken::Table(t) => write!(f, "t{t}"),
        }
    }
}

impl DecToken {
    /// Index order: `<pad>`, `<sos>`, `<eos>`, then the eight strings.
    pub fn index(self) -> usize {
        match self {
            DecToken::Pad => 0,
            DecToken::Sos => 1,
            DecToken::Eos => 2,
            DecToken::Bits(b) => 3 + b.0 as usize,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(DecToken::Pad),
            1 => Some(DecToken::Sos),
            2 => Some(DecToken::Eos),
            i if i < DEC_VOCAB => Some(DecToken::Bits(Bits((i - 3) as u16))),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "<pad>" => Some(DecToken::Pad),
            "<sos>" => Some(DecToken::Sos),
            "<eos>" => Some(DecToken::Eos),
            _ => Bits::parse(s).ok().map(DecToken::Bits),
        }
    }
}

impl fmt::Display for DecToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecToken::Pad => f.write_str("<pad>"),
            DecToken::Sos => f.write_str("<sos>"),
            DecToken::Eos => f.write_str("<eos>"),
            DecToken::Bits(b) => b.fmt(f),
        }
    }
}

pub fn encoder_vocab() -> Vec<String> {
    (0..ENC_VOCAB).map(|i| EncToken::from_index(i).unwrap().to_string()).collect()
}

pub fn decoder_vocab() -> Vec<String> {
    (0..DEC_VOCAB).map(|i| DecToken::from_index(i).unwrap().to_string()).collect()
}

/// One task instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub input: Vec<EncToken>,
    /// Copy of the input string, one string per applied table, then EOS.
    pub target: Vec<DecToken>,
    /// Input position attended at each decoder step.
    pub attention: Vec<usize>,
}

impl Example {
    /// Builds the example for `x` pushed through `tables` left to right.
    pub fn build(x: Bits, tables: &[&LookupTable]) -> Example {
        let mut input = vec![EncToken::Bits(x)];
        let mut target = vec![DecToken::Bits(x)];
        let mut cur = x;
        for t in tables {
            input.push(EncToken::Table(t.id));
            cur = t.apply(cur);
            target.push(DecToken::Bits(cur));
        }
        target.push(DecToken::Eos);
        let last = input.len() - 1;
        let attention = (0..target.len()).map(|t| t.min(last)).collect();
        Example { input, target, attention }
    }

    pub fn source_string(&self) -> Bits {
        match self.input[0] {
            EncToken::Bits(b) => b,
            EncToken::Table(_) => panic!("example must start with a string"),
        }
    }

    /// Table ids in application order.
    pub fn tables(&self) -> Vec<usize> {
        self.input
            .iter()
            .filter_map(|t| match t {
                EncToken::Table(id) => Some(*id),
                EncToken::Bits(_) => None,
            })
            .collect()
    }

    pub fn input_indices(&self) -> Vec<usize> {
        self.input.iter().map(|t| t.index()).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.target.iter().map(|t| t.index()).collect()
    }

    /// Decoder output strings before EOS.
    pub fn output_strings(&self) -> Vec<Bits> {
        self.target
            .iter()
            .filter_map(|t| match t {
                DecToken::Bits(b) => Some(*b),
                _ => None,
            })
            .collect()
    }
}

/// The five example sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    HeldoutInputs,
    HeldoutCompositions,
    HeldoutTables,
    NewCompositions,
}

impl Split {
    pub const ALL: [Split; 5] =
        [Split::Train, Split::HeldoutInputs, Split::HeldoutCompositions, Split::HeldoutTables, Split::NewCompositions];
    pub const TESTS: [Split; 4] =
        [Split::HeldoutInputs, Split::HeldoutCompositions, Split::HeldoutTables, Split::NewCompositions];

    pub fn short(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldoutInputs => "hi",
            Split::HeldoutCompositions => "hc",
            Split::HeldoutTables => "ht",
            Split::NewCompositions => "nc",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::HeldoutInputs => "heldout_inputs.tsv",
            Split::HeldoutCompositions => "heldout_compositions.tsv",
            Split::HeldoutTables => "heldout_tables.tsv",
            Split::NewCompositions => "new_compositions.tsv",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.short() == s || sp.file_name().trim_end_matches(".tsv") == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Put all eight inputs of every atomic table into train.
    pub include_atomic: bool,
    /// Compositions moved to the heldout-compositions split.
    pub heldout_compositions: usize,
    /// Inputs per training composition moved to heldout-inputs.
    pub heldout_inputs_per_composition: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { include_atomic: true, heldout_compositions: 8, heldout_inputs_per_composition: 2 }
    }
}

/// Train set plus the four evaluation splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub seed: u64,
    pub config: SplitConfig,
    pub tables: Vec<LookupTable>,
    pub train: Vec<Example>,
    pub heldout_inputs: Vec<Example>,
    pub heldout_compositions: Vec<Example>,
    pub heldout_tables: Vec<Example>,
    pub new_compositions: Vec<Example>,
}

impl DatasetBundle {
    /// Tables and splits from one seed.
    pub fn generate(seed: u64, config: SplitConfig) -> DatasetBundle {
        let tables = generate_tables(&mut Rng::named(seed, "tables"), N_TABLES, STRING_LEN);
        let mut bundle = build_splits(&tables, &mut Rng::named(seed, "splits"), config);
        bundle.seed = seed;
        bundle
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::HeldoutInputs => &self.heldout_inputs,
            Split::HeldoutCompositions => &self.heldout_compositions,
            Split::HeldoutTables => &self.heldout_tables,
            Split::NewCompositions => &self.new_compositions,
        }
    }

    pub(crate) fn split_mut(&mut self, split: Split) -> &mut Vec<Example> {
        match split {
            Split::Train => &mut self.train,
            Split::HeldoutInputs => &mut self.heldout_inputs,
            Split::HeldoutCompositions => &mut self.heldout_compositions,
            Split::HeldoutTables => &mut self.heldout_tables,
            Split::NewCompositions => &mut self.new_compositions,
        }
    }

    pub fn table(&self, id: usize) -> &LookupTable {
        &self.tables[id - 1]
    }

    /// Recomputes an example's target from the atomic tables.
    pub fn expected_target(&self, ex: &Example) -> Vec<DecToken> {
        let ts: Vec<&LookupTable> = ex.tables().into_iter().map(|id| self.table(id)).collect();
        Example::build(ex.source_string(), &ts).target
    }

    /// Every test example in split order.
    pub fn test_examples(&self) -> impl Iterator<Item = (Split, &Example)> {
        Split::TESTS.into_iter().flat_map(move |s| self.split(s).iter().map(move |e| (s, e)))
    }
}

/// Distributes the 64 ordered compositions over the splits:
/// pairs over `{t7, t8}` go to new-compositions, pairs with exactly one of them
/// to heldout-tables, a random draw of the remaining pairs to
/// heldout-compositions, and every other pair gives most inputs to train and
/// the rest to heldout-inputs.
pub fn build_splits(tables: &[LookupTable], rng: &mut Rng, config: SplitConfig) -> DatasetBundle {
    let n = tables.len();
    let held_table = |id: usize| id + 2 > n;
    let mut bundle = DatasetBundle {
        seed: 0,
        config,
        tables: tables.to_vec(),
        train: Vec::new(),
        heldout_inputs: Vec::new(),
        heldout_compositions: Vec::new(),
        heldout_tables: Vec::new(),
        new_compositions: Vec::new(),
    };
    if config.include_atomic {
        for t in tables {
            for x in Bits::all() {
                bundle.train.push(Example::build(x, &[t]));
            }
        }
    }
    let mut pool = Vec::new();
    for a in tables {
        for b in tables {
            let all = || Bits::all().map(|x| Example::build(x, &[a, b]));
            match (held_table(a.id), held_table(b.id)) {
                (true, true) => bundle.new_compositions.extend(all()),
                (true, false) | (false, true) => bundle.heldout_tables.extend(all()),
                (false, false) => pool.push((a, b)),
            }
        }
    }
    let held: Vec<usize> = rng.sample_indices(pool.len(), config.heldout_compositions);
    for (k, (a, b)) in pool.into_iter().enumerate() {
        if held.binary_search(&k).is_ok() {
            bundle.heldout_compositions.extend(Bits::all().map(|x| Example::build(x, &[a, b])));
            continue;
        }
        let out = rng.sample_indices(N_STRINGS, config.heldout_inputs_per_composition);
        for x in Bits::all() {
            let ex = Example::build(x, &[a, b]);
            if out.binary_search(&(x.0 as usize)).is_ok() {
                bundle.heldout_inputs.push(ex);
            } else {
                bundle.train.push(ex);
            }
        }
    }
    bundle
}
