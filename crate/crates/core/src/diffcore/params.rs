use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Handle to a named parameter slice inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SlotInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat vector of every trainable parameter with named, disjoint matrix slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    values: Vec<f64>,
    slots: Vec<SlotInfo>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows × cols` slice initialised from `init` (row-major).
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Vec<f64>) -> Slot {
        assert_eq!(init.len(), rows * cols, "initial values do not match shape");
        let slot = Slot(self.slots.len());
        self.slots.push(SlotInfo {
            name: name.into(),
            offset: self.values.len(),
            rows,
            cols,
        });
        self.values.extend(init);
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "parameter count is fixed");
        self.values.copy_from_slice(values);
    }

    pub fn slots(&self) -> &[SlotInfo] {
        &self.slots
    }

    pub fn info(&self, slot: Slot) -> &SlotInfo {
        &self.slots[slot.0]
    }

    pub fn slice(&self, slot: Slot) -> &[f64] {
        &self.values[self.slots[slot.0].range()]
    }

    pub fn slice_mut(&mut self, slot: Slot) -> &mut [f64] {
        let r = self.slots[slot.0].range();
        &mut self.values[r]
    }

    pub fn matrix(&self, slot: Slot) -> Array2<f64> {
        let info = &self.slots[slot.0];
        Array2::from_shape_vec((info.rows, info.cols), self.slice(slot).to_vec())
            .expect("slot shape matches its length")
    }

    pub fn scalar(&self, slot: Slot) -> f64 {
        self.slice(slot)[0]
    }

    pub fn find(&self, name: &str) -> Option<Slot> {
        self.slots.iter().position(|s| s.name == name).map(Slot)
    }
}
