//! `SPMISTPC` model file: magic, u16 version, u32 vocabulary count then
//! (u32 length, token bytes, f64 idf) per token, u32 topic count then
//! (u32 length, name bytes) per topic, then the K × (V + 1) weight matrix as
//! row-major little-endian f64.

use std::io::{Read, Write};

use super::logreg::TopicModel;
use super::tfidf::Vocabulary;
use super::TopicError;
use crate::binio::{self, ByteReader};
use crate::model::Topic;

const MAGIC: &[u8; 8] = b"SPMISTPC";
const VERSION: u16 = 1;

impl TopicModel {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), TopicError> {
        let vocab = self.vocabulary();
        w.write_all(MAGIC)?;
        binio::write_u16(&mut w, VERSION)?;
        binio::write_u32(&mut w, vocab.len() as u32)?;
        for (token, idf) in vocab.tokens().iter().zip(vocab.idf_weights()) {
            binio::write_string(&mut w, token)?;
            binio::write_f64(&mut w, *idf)?;
        }
        binio::write_u32(&mut w, self.topic_order().len() as u32)?;
        for t in self.topic_order() {
            binio::write_string(&mut w, t.as_str())?;
        }
        let mut buf = Vec::with_capacity(self.weights().len() * 8);
        for v in self.weights() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, TopicError> {
        let mut r = ByteReader::new(r);
        r.expect_magic(MAGIC)?;
        let at = r.offset();
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.invalid(at, format!("unsupported version {version}")).into());
        }
        let vocab_start = r.offset();
        let n_tokens = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        let mut idf = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            tokens.push(r.string()?);
            idf.push(r.f64()?);
        }
        let vocabulary =
            Vocabulary::from_parts(tokens, idf).map_err(|m| r.invalid(vocab_start, m))?;
        let topics_start = r.offset();
        let n_topics = r.u32()? as usize;
        let mut topic_order = Vec::with_capacity(n_topics.min(Topic::ALL.len()));
        for _ in 0..n_topics {
            let at = r.offset();
            let name = r.string()?;
            let topic = name
                .parse::<Topic>()
                .map_err(|_| r.invalid(at, format!("unknown topic '{name}'")))?;
            topic_order.push(topic);
        }
        if !(2..=Topic::ALL.len()).contains(&n_topics) {
            return Err(r.invalid(topics_start, format!("{n_topics} topics")).into());
        }
        let weights_start = r.offset();
        let n_weights = n_topics * (vocabulary.len() + 1);
        let mut weights = Vec::with_capacity(n_weights);
        for _ in 0..n_weights {
            weights.push(r.f64()?);
        }
        r.expect_eof()?;
        TopicModel::from_parts(vocabulary, topic_order, weights).map_err(|e| match e {
            TopicError::Format(f) => TopicError::Format(f),
            other => r.invalid(weights_start, other.to_string()).into(),
        })
    }
}
