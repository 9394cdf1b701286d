use crate::error::{Error, Result};

use super::{Dataset, SampleRecord};

/// A borrowed subset of a dataset, in file order.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn all(dataset: &'a Dataset) -> Self {
        DatasetView {
            dataset,
            indices: (0..dataset.len()).collect(),
        }
    }

    /// Records whose subject satisfies `keep`.
    pub fn filter_subjects(dataset: &'a Dataset, keep: impl Fn(u16) -> bool) -> Self {
        let indices = dataset
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| keep(r.subject_id))
            .map(|(i, _)| i)
            .collect();
        DatasetView { dataset, indices }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    /// Positions of the view's records in the underlying dataset.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> &'a SampleRecord {
        &self.dataset.records()[self.indices[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a SampleRecord> + '_ {
        self.indices.iter().map(|&i| &self.dataset.records()[i])
    }

    pub fn subjects(&self) -> Vec<u16> {
        let mut s: Vec<u16> = self.iter().map(|r| r.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// `(train, test)` where test holds exactly the samples of `held_out`.
pub fn split_leave_one_subject_out(dataset: &Dataset, held_out: u16) -> Result<(DatasetView<'_>, DatasetView<'_>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !dataset.records().iter().any(|r| r.subject_id == held_out) {
        return Err(Error::UnknownSubject(held_out));
    }
    Ok((
        DatasetView::filter_subjects(dataset, |s| s != held_out),
        DatasetView::filter_subjects(dataset, |s| s == held_out),
    ))
}
