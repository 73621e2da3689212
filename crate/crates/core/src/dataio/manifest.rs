use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image_io::{image_dims, load_image, load_labels, load_mask};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse(format!("unknown split {s:?}"))),
        }
    }
}

/// One manifest line. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub image: PathBuf,
    pub saliency: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
    pub split: Split,
}

/// A loaded record.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub saliency: Mask,
    pub contour: Option<Mask>,
    pub instances: Option<LabelMap>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    /// Parses JSON lines; blank lines are skipped.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record =
                serde_json::from_str(line).map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(Manifest {
            root: root.into(),
            records,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, root)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("serializable"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Checks that every referenced file exists and that all files of a
    /// record share the image's dimensions.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let dims = image_dims(self.resolve(&r.image))?;
            let others = [Some(&r.saliency), r.contour.as_ref(), r.instances.as_ref()];
            for p in others.into_iter().flatten() {
                let d = image_dims(self.resolve(p))?;
                if d != dims {
                    return Err(Error::Data(format!(
                        "manifest record {}: {} is {}x{} but the image is {}x{}",
                        i + 1,
                        p.display(),
                        d.0,
                        d.1,
                        dims.0,
                        dims.1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(&self, r: &Record) -> Result<Sample> {
        let image = load_image(self.resolve(&r.image))?;
        let saliency = load_mask(self.resolve(&r.saliency))?;
        let contour = r.contour.as_ref().map(|p| load_mask(self.resolve(p))).transpose()?;
        let instances = r.instances.as_ref().map(|p| load_labels(self.resolve(p))).transpose()?;
        let (h, w) = (image.shape().h, image.shape().w);
        let masks = [Some(saliency.dims()), contour.as_ref().map(|m| m.dims()), instances.as_ref().map(|m| m.dims())];
        if masks.into_iter().flatten().any(|d| d != (h, w)) {
            return Err(Error::Data(format!("{}: ground truth dimensions differ from the image", r.image.display())));
        }
        Ok(Sample {
            image,
            saliency,
            contour,
            instances,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split).into_iter().map(|r| self.load(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{save_image, save_labels, save_mask};
    use crate::tensor::Shape;

    #[test]
    fn parse_and_serialize_round_trip() {
        let text = r#"{"image":"a.png","saliency":"a_s.png","split":"train"}

{"image":"b.png","saliency":"b_s.png","contour":"b_c.png","instances":"b_i.png","split":"test"}
"#;
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.split(Split::Test).len(), 1);
        assert_eq!(m.resolve(Path::new("x.png")), PathBuf::from("/data/x.png"));
        let again = Manifest::parse(&m.to_jsonl(), "/data").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = Manifest::parse("{\"image\":\"a\",\"saliency\":\"b\",\"split\":\"train\"}\n{\"image\":1}", "").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(Manifest::parse(r#"{"image":"a","saliency":"b","split":"dev"}"#, "").is_err());
        assert!(Manifest::parse(r#"{"image":"a","saliency":"b","split":"val","extra":1}"#, "").is_err());
    }

    #[test]
    fn validation_rejects_mismatched_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        save_image(dir.path().join("i.png"), &Tensor::zeros(Shape::new(1, 3, 4, 5))).unwrap();
        save_mask(dir.path().join("s.png"), &Mask::new(4, 5, false)).unwrap();
        save_labels(dir.path().join("l.png"), &LabelMap::new(4, 6, 0)).unwrap();
        let ok = r#"{"image":"i.png","saliency":"s.png","split":"train"}"#;
        let m = Manifest::parse(ok, dir.path()).unwrap();
        m.validate().unwrap();
        assert_eq!(m.load_split(Split::Train).unwrap().len(), 1);
        let bad = r#"{"image":"i.png","saliency":"s.png","instances":"l.png","split":"train"}"#;
        let m = Manifest::parse(bad, dir.path()).unwrap();
        assert!(matches!(m.validate(), Err(Error::Data(_))));
        let missing = r#"{"image":"i.png","saliency":"nope.png","split":"train"}"#;
        assert!(Manifest::parse(missing, dir.path()).unwrap().validate().is_err());
    }
}
