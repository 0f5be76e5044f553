use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{s, Array3, Array4};

use super::{preprocess_image, DatasetError, DatasetManifest, Label, PreprocessSpec};
use crate::nn::Real;

#[derive(Clone, Debug)]
pub enum Pixels<T> {
    /// Already preprocessed `(3, H, W)` array.
    Loaded(Arc<Array3<T>>),
    /// Decoded and preprocessed on every access.
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ImageItem<T> {
    pub id: String,
    pub label: Label,
    pub pixels: Pixels<T>,
}

/// Labeled images ready to be batched for a network.
#[derive(Clone, Debug)]
pub struct ImageSet<T> {
    items: Vec<ImageItem<T>>,
    preprocess: Option<PreprocessSpec>,
}

impl<T: Real> ImageSet<T> {
    /// In-memory set of already normalised arrays.
    pub fn from_arrays(items: Vec<(String, Label, Array3<T>)>) -> Self {
        let items = items
            .into_iter()
            .map(|(id, label, a)| ImageItem { id, label, pixels: Pixels::Loaded(Arc::new(a)) })
            .collect();
        Self { items, preprocess: None }
    }

    /// Images for `ids` (in manifest order). With `preload`, every image is
    /// decoded and preprocessed once up front.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        ids: &BTreeSet<String>,
        spec: &PreprocessSpec,
        preload: bool,
    ) -> Result<Self, DatasetError> {
        spec.validate()?;
        let mut items = Vec::with_capacity(ids.len());
        for sample in manifest.samples().iter().filter(|s| ids.contains(&s.id)) {
            let pixels = if preload {
                Pixels::Loaded(Arc::new(preprocess_image(&sample.image_path, spec)?))
            } else {
                Pixels::File(sample.image_path.clone())
            };
            items.push(ImageItem { id: sample.id.clone(), label: sample.label, pixels });
        }
        if items.len() != ids.len() {
            return Err(DatasetError::Invalid(format!(
                "{} requested ids are not in the manifest",
                ids.len() - items.len()
            )));
        }
        Ok(Self { items, preprocess: Some(spec.clone()) })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ImageItem<T>] {
        &self.items
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn labeled_ids(&self) -> Vec<(String, Label)> {
        self.items.iter().map(|i| (i.id.clone(), i.label)).collect()
    }

    /// Items whose id is in `ids`, sharing loaded pixel buffers.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Self {
        Self {
            items: self.items.iter().filter(|i| ids.contains(&i.id)).cloned().collect(),
            preprocess: self.preprocess.clone(),
        }
    }

    fn image(&self, index: usize) -> Result<Arc<Array3<T>>, DatasetError> {
        match &self.items[index].pixels {
            Pixels::Loaded(a) => Ok(Arc::clone(a)),
            Pixels::File(path) => {
                let spec = self.preprocess.as_ref().ok_or_else(|| {
                    DatasetError::Invalid("file-backed image set has no preprocessing spec".into())
                })?;
                Ok(Arc::new(preprocess_image(path, spec)?))
            }
        }
    }

    /// Stacks the given items into an NCHW batch plus class indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Array4<T>, Vec<usize>), DatasetError> {
        let first = self.image(*indices.first().ok_or_else(|| DatasetError::Invalid("empty batch".into()))?)?;
        let (c, h, w) = first.dim();
        let mut out = Array4::<T>::zeros((indices.len(), c, h, w));
        out.slice_mut(s![0, .., .., ..]).assign(&first);
        for (slot, &i) in indices.iter().enumerate().skip(1) {
            let img = self.image(i)?;
            if img.dim() != (c, h, w) {
                return Err(DatasetError::Invalid(format!("image `{}` has shape {:?}", self.items[i].id, img.dim())));
            }
            out.slice_mut(s![slot, .., .., ..]).assign(&img);
        }
        let targets = indices.iter().map(|&i| self.items[i].label.class_index()).collect();
        Ok((out, targets))
    }
}
