//! Few-shot learning of novel categories on top of a frozen source model.
//!
//! Novel leaves hang under supercategories the source model already knows.
//! The source data embedding seeds `W`, and each novel category starts at the
//! reconstruction of the mean of its projected examples. The source
//! supercategory embeddings act as the frozen parents `u_p`, and a frozen
//! source dictionary (attribute embeddings, optionally plus category
//! embeddings) replaces the attribute block in the regularizer. Only `W`, the novel category embeddings and their
//! reconstruction weights are learned.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{projection, sparse_code, TrainReport, Trainable, Trainer};
use crate::data::{AttributeTable, Dataset, NodeKind};
use crate::model::{EmbeddingModel, Hyperparams, Params};
use crate::{Error, Result};

/// Which frozen source embeddings form the reconstruction dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferDictionary {
    #[default]
    Attributes,
    /// Attributes followed by the source leaf categories. Category atoms are
    /// named `like <category>` and rescaled into the attribute norm ball.
    AttributesAndCategories,
}

/// Learns novel categories from `dataset` using `source` as frozen prior.
///
/// The returned model covers `dataset`'s taxonomy; its attribute block is the
/// transfer dictionary. `hyper.embed_dim` is taken from the source model.
pub fn transfer_fit(
    dataset: &Dataset,
    source: &EmbeddingModel,
    hyper: &Hyperparams,
    dictionary: TransferDictionary,
) -> Result<(EmbeddingModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let src = source.params();
    let src_tax = source.taxonomy();
    let hyper = Hyperparams {
        embed_dim: src.embed_dim(),
        ..hyper.clone()
    };
    hyper.validate()?;
    if dataset.dim() != src.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "novel data has d={} but the source model expects {}",
            dataset.dim(),
            src.input_dim()
        )));
    }

    let tax = dataset.taxonomy();
    // supercategory index in the new taxonomy -> index in the source taxonomy
    let mut sup_map = Vec::with_capacity(tax.num_supers());
    for id in tax.node_ids().skip(tax.num_leaves()) {
        let name = tax.name(id)?;
        match src_tax.id_of(name) {
            Ok(s) if src_tax.kind(s)? == NodeKind::Super => sup_map.push(s.index()),
            _ => {
                let child = tax
                    .children(id)?
                    .into_iter()
                    .find(|c| tax.is_leaf(*c))
                    .map(|c| tax.name(c).unwrap_or("?").to_string())
                    .unwrap_or_default();
                return Err(Error::Validation(format!(
                    "supercategory {name:?} (parent of novel class {child:?}) is absent from the source taxonomy"
                )));
            }
        }
    }

    // dictionary atoms and their names
    let bound = hyper.attr_bound();
    let mut names: Vec<String> = source.attribute_names().to_vec();
    let mut dict = src.u_attr.clone();
    if dictionary == TransferDictionary::AttributesAndCategories {
        let mut cats = src.u_cat.clone();
        projection::clamp_columns(&mut cats, bound);
        dict = ndarray::concatenate(ndarray::Axis(1), &[dict.view(), cats.view()])
            .expect("same embedding dimension");
        for leaf in src_tax.leaf_ids() {
            names.push(format!("like {}", src_tax.name(leaf)?));
        }
    }
    projection::clamp_columns(&mut dict, bound);
    let atoms = names.len();

    // novel attribute labels re-indexed onto the dictionary
    let mut labels = Array2::<u8>::zeros((tax.num_leaves(), atoms));
    let table = dataset.attributes();
    for (a, name) in table.names().iter().enumerate() {
        let target = source
            .attribute_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                Error::Validation(format!("attribute {name:?} is unknown to the source model"))
            })?;
        labels.column_mut(target).assign(&table.labels().column(a));
    }
    let train_set = Dataset::new(
        dataset.features().clone(),
        dataset.labels().to_vec(),
        tax.clone(),
        AttributeTable::new(names.clone(), labels)?,
    )?;

    let c = tax.num_leaves();
    let mut p = Params::zeros(src.embed_dim(), src.input_dim(), c, tax.num_supers(), atoms);
    p.w = src.w.clone();
    p.u_attr = dict;
    for (k, &s) in sup_map.iter().enumerate() {
        p.u_sup.column_mut(k).assign(&src.concept(s));
        let node = c + k;
        if tax.parent_idx(node).is_some() {
            let src_beta = src.b.column(s);
            p.b.slice_mut(ndarray::s![..src_beta.len(), node])
                .assign(&src_beta);
        }
    }
    // novel categories start at the mean of their projected shots, snapped
    // onto their best reconstruction from the frozen parent and dictionary
    let mut counts = vec![0usize; c];
    for (x, y) in dataset.features().rows().into_iter().zip(dataset.labels()) {
        p.u_cat
            .column_mut(y.index())
            .scaled_add(1.0, &src.w.dot(&x));
        counts[y.index()] += 1;
    }
    for leaf in 0..c {
        if counts[leaf] > 0 {
            p.u_cat
                .column_mut(leaf)
                .mapv_inplace(|v| v / counts[leaf] as f64);
        } else {
            let parent = tax.parent_idx(leaf).expect("leaves always have a parent");
            let init = p.concept(parent).to_owned();
            p.u_cat.column_mut(leaf).assign(&init);
        }
    }
    projection::project_all(&mut p, &hyper, tax);
    let mut b_cols = vec![false; tax.len()];
    b_cols[..c].fill(true);
    p.b = sparse_code::solve_b_masked(&p, tax, hyper.gamma1, hyper.gamma2, &b_cols);
    for leaf in 0..c {
        let parent = tax.parent_idx(leaf).expect("leaves always have a parent");
        let recon = p.concept(parent).to_owned() + p.u_attr.dot(&p.b.column(leaf));
        p.u_cat.column_mut(leaf).assign(&recon);
    }
    projection::project_all(&mut p, &hyper, tax);
    p.b = sparse_code::solve_b_masked(&p, tax, hyper.gamma1, hyper.gamma2, &b_cols);

    let trainable = Trainable {
        w: true,
        u_cat: true,
        u_sup: false,
        u_attr: false,
        b_cols,
    };
    let (params, report) = Trainer::new(&train_set, &hyper, trainable).run(p)?;
    let model = EmbeddingModel::new(params, tax.clone(), names, hyper)?;
    Ok((model, report))
}
