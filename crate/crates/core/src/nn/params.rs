use crate::tensor::{fnv_feed, fnv_start, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// `false` for normalization running statistics.
    pub trainable: bool,
}

/// Named parameters and buffers of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tag: u32,
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new(tag: u32) -> Self {
        ParamSet {
            tag,
            entries: Vec::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Checksum over trainable parameters only.
    pub fn checksum(&self) -> u64 {
        self.checksum_filtered(|e| e.trainable)
    }

    /// Checksum over parameters and buffers.
    pub fn checksum_all(&self) -> u64 {
        self.checksum_filtered(|_| true)
    }

    fn checksum_filtered(&self, keep: impl Fn(&ParamEntry) -> bool) -> u64 {
        let mut h = fnv_start();
        for e in self.entries.iter().filter(|e| keep(e)) {
            h = fnv_feed(h, e.name.as_bytes());
            h = fnv_feed(h, &e.value.checksum().to_le_bytes());
        }
        h
    }
}
