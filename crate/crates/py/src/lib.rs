//! Python bindings for tokenization, vocabularies, keyword extraction,
//! the evaluation metrics and a trained intent classifier.

use std::collections::BTreeMap;
use std::path::PathBuf;

use emphi::corpus::{self, IntentExample};
use emphi::intent_classifier::IntentClassifier;
use emphi::model::IntentDistribution;
use emphi::{evalsuite, keywords, Error, IntentLabel};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingFile(_) | Error::MissingArtifact { .. } => {
            PyFileNotFoundError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn distribution(p: Vec<f64>) -> PyResult<IntentDistribution> {
    IntentDistribution::new(p).map_err(to_py)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

#[pyfunction]
fn intent_names() -> Vec<&'static str> {
    IntentLabel::names().to_vec()
}

/// Sentence BLEU (n <= 4, add-one smoothing for n >= 2) of token lists.
#[pyfunction]
fn bleu(hypothesis: Vec<String>, reference: Vec<String>) -> PyResult<f64> {
    evalsuite::bleu(&hypothesis, &reference).map_err(to_py)
}

#[pyfunction]
fn distinct_n(responses: Vec<Vec<String>>, n: usize) -> PyResult<f64> {
    evalsuite::distinct_n(&responses, n).map_err(to_py)
}

/// KL(p || q) over the nine intents.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    Ok(evalsuite::kl_divergence(
        &distribution(p)?,
        &distribution(q)?,
    ))
}

/// Top-`k` keywords per intent from parallel lists of texts and labels.
#[pyfunction]
#[pyo3(signature = (texts, labels, k = 30))]
fn extract_keywords(
    texts: Vec<String>,
    labels: Vec<String>,
    k: usize,
) -> PyResult<BTreeMap<String, Vec<(String, f64)>>> {
    if texts.len() != labels.len() {
        return Err(PyValueError::new_err("texts and labels differ in length"));
    }
    let corpus = texts
        .into_iter()
        .zip(labels)
        .map(|(text, label)| {
            Ok(IntentExample {
                text,
                intent: IntentLabel::from_name(&label)?,
            })
        })
        .collect::<emphi::Result<Vec<_>>>()
        .map_err(to_py)?;
    let table =
        keywords::extract_keywords(&corpus, k, &keywords::default_stopwords()).map_err(to_py)?;
    Ok(IntentLabel::all()
        .map(|i| (i.name().to_string(), table.keywords(i).to_vec()))
        .collect())
}

#[pyclass(name = "Vocabulary", module = "emphi_py")]
struct PyVocabulary {
    inner: corpus::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Builds a vocabulary from tokenized sequences.
    #[staticmethod]
    #[pyo3(signature = (sequences, max_size = 8000, min_freq = 1))]
    fn build(sequences: Vec<Vec<String>>, max_size: usize, min_freq: u64) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: corpus::Vocabulary::build(sequences, max_size, min_freq).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: corpus::Vocabulary::load(&path).map_err(to_py)?,
        })
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<usize> {
        self.inner.encode(&tokens)
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<Vec<String>> {
        self.inner.decode(&ids).map_err(to_py)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A trained intent classifier loaded from its artifact prefix.
#[pyclass(name = "IntentClassifier", module = "emphi_py")]
struct PyIntentClassifier {
    inner: IntentClassifier,
}

#[pymethods]
impl PyIntentClassifier {
    #[staticmethod]
    fn load(prefix: PathBuf) -> PyResult<Self> {
        Ok(PyIntentClassifier {
            inner: IntentClassifier::load(&prefix).map_err(to_py)?.0,
        })
    }

    /// Probability per intent name.
    fn predict_proba(&self, text: &str) -> PyResult<BTreeMap<&'static str, f64>> {
        let d = self.inner.classify_text(text).map_err(to_py)?;
        Ok(IntentLabel::all()
            .map(|i| (i.name(), d.0[i.id()]))
            .collect())
    }

    fn predict(&self, text: &str) -> PyResult<&'static str> {
        Ok(self
            .inner
            .classify_text(text)
            .map_err(to_py)?
            .argmax()
            .name())
    }
}

#[pymodule]
fn emphi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(intent_names, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_n, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(extract_keywords, m)?)?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyIntentClassifier>()?;
    Ok(())
}
