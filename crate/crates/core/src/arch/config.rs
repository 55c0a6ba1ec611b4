//! Line-oriented JSON architecture format.
//!
//! The first non-blank line is a header object; every following non-blank
//! line is one layer record. Lines starting with `#` are comments.
//!
//! ```text
//! {"format":"hetconv-arch","version":1,"name":"tiny","input":[3,8,8]}
//! {"name":"c1","kind":"standard_conv","in":3,"out":8,"k":3,"stride":1,"pad":1}
//! {"name":"c2","kind":"hetconv","in":8,"out":8,"k":3,"stride":1,"pad":1,"p":4}
//! {"name":"add","kind":"add_residual","from":0}
//! {"name":"gap","kind":"pool","mode":"avg","global":true}
//! {"name":"fc","kind":"fc","in":8,"out":10}
//! ```
//!
//! Fields per kind (all integers are non-negative):
//!
//! | kind            | required                        | optional |
//! |-----------------|---------------------------------|----------|
//! | `standard_conv` | `in out k stride pad`           | `input`  |
//! | `hetconv`       | `in out k stride pad p`         | `input`  |
//! | `dwc`, `pwc`    | `in out k stride pad`           | `input`  |
//! | `gwc`           | `in out k stride pad groups`    | `input`  |
//! | `pool`          | `mode` and `k stride pad`, or `mode` and `"global":true` | `input` |
//! | `fc`            | `in out`                        | `input`  |
//! | `add_residual`  | `from`                          | `input`  |
//!
//! `mode` is `"max"` or `"avg"`. `input` and `from` are zero-based layer
//! indices of earlier layers. Any other field is an error.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, LayerKind, LayerOp, LayerSpec, Pool, PoolMode, Shape3};
use crate::conv::ConvGeometry;
use crate::{Error, Result};

pub const ARCH_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "hetconv-arch";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    name: String,
    input: [usize; 3],
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    name: String,
    kind: String,
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    in_: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pad: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    from: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<usize>,
}

impl Record {
    fn present(&self) -> Vec<&'static str> {
        let fields = [
            ("in", self.in_.is_some()),
            ("out", self.out.is_some()),
            ("k", self.k.is_some()),
            ("stride", self.stride.is_some()),
            ("pad", self.pad.is_some()),
            ("p", self.p.is_some()),
            ("groups", self.groups.is_some()),
            ("mode", self.mode.is_some()),
            ("global", self.global.is_some()),
            ("from", self.from.is_some()),
        ];
        fields.into_iter().filter(|f| f.1).map(|f| f.0).collect()
    }
}

const CONV: &[&str] = &["in", "out", "k", "stride", "pad"];

fn allowed_fields(kind: LayerKind, global: bool) -> (Vec<&'static str>, Vec<&'static str>) {
    let v = |s: &[&'static str]| s.to_vec();
    match kind {
        LayerKind::StandardConv | LayerKind::Dwc | LayerKind::Pwc => (v(CONV), vec![]),
        LayerKind::HetConv => ([CONV, &["p"]].concat(), vec![]),
        LayerKind::Gwc => ([CONV, &["groups"]].concat(), vec![]),
        LayerKind::Pool if global => (v(&["mode", "global"]), vec![]),
        LayerKind::Pool => (v(&["mode", "k", "stride", "pad"]), v(&["global"])),
        LayerKind::Fc => (v(&["in", "out"]), vec![]),
        LayerKind::AddResidual => (v(&["from"]), vec![]),
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn record_to_layer(r: Record, line: usize) -> Result<LayerSpec> {
    let kind =
        LayerKind::parse(&r.kind).ok_or_else(|| parse_error(line, format!("unknown layer kind {:?}", r.kind)))?;
    let global = r.global == Some(true);
    let (required, optional) = allowed_fields(kind, global);
    let present = r.present();
    for f in &required {
        if !present.contains(f) {
            return Err(parse_error(
                line,
                format!("{kind} layer {:?} is missing field `{f}`", r.name),
            ));
        }
    }
    for f in &present {
        if !required.contains(f) && !optional.contains(f) {
            return Err(parse_error(line, format!("field `{f}` is not allowed for kind {kind}")));
        }
    }
    let geom = || -> Result<ConvGeometry> {
        ConvGeometry::new(
            r.in_.unwrap_or(0),
            r.out.unwrap_or(0),
            r.k.unwrap_or(0),
            r.stride.unwrap_or(0),
            r.pad.unwrap_or(0),
        )
        .map_err(|e| parse_error(line, e.to_string()))
    };
    let mode = || -> Result<PoolMode> {
        match r.mode.as_deref() {
            Some("max") => Ok(PoolMode::Max),
            Some("avg") => Ok(PoolMode::Avg),
            other => Err(parse_error(
                line,
                format!("pool mode must be \"max\" or \"avg\", got {other:?}"),
            )),
        }
    };
    let op = match kind {
        LayerKind::StandardConv => LayerOp::StandardConv(geom()?),
        LayerKind::HetConv => LayerOp::HetConv {
            geometry: geom()?,
            part: r.p.unwrap_or(0),
        },
        LayerKind::Dwc => LayerOp::Dwc(geom()?),
        LayerKind::Pwc => LayerOp::Pwc(geom()?),
        LayerKind::Gwc => LayerOp::Gwc {
            geometry: geom()?,
            groups: r.groups.unwrap_or(0),
        },
        LayerKind::Pool if global => LayerOp::Pool(Pool::Global { mode: mode()? }),
        LayerKind::Pool => LayerOp::Pool(Pool::Window {
            mode: mode()?,
            kernel: r.k.unwrap_or(0),
            stride: r.stride.unwrap_or(0),
            padding: r.pad.unwrap_or(0),
        }),
        LayerKind::Fc => LayerOp::Fc {
            in_features: r.in_.unwrap_or(0),
            out_features: r.out.unwrap_or(0),
        },
        LayerKind::AddResidual => LayerOp::AddResidual {
            from: r.from.unwrap_or(0),
        },
    };
    Ok(LayerSpec {
        name: r.name,
        op,
        input: r.input,
    })
}

fn layer_to_record(l: &LayerSpec) -> Record {
    let mut r = Record {
        name: l.name.clone(),
        kind: l.op.kind().as_str().to_string(),
        input: l.input,
        ..Record::default()
    };
    if let Some(g) = l.op.geometry() {
        r.in_ = Some(g.in_channels);
        r.out = Some(g.out_channels);
        r.k = Some(g.kernel);
        r.stride = Some(g.stride);
        r.pad = Some(g.padding);
    }
    let mode_str = |m: PoolMode| {
        Some(match m {
            PoolMode::Max => "max".to_string(),
            PoolMode::Avg => "avg".to_string(),
        })
    };
    match l.op {
        LayerOp::HetConv { part, .. } => r.p = Some(part),
        LayerOp::Gwc { groups, .. } => r.groups = Some(groups),
        LayerOp::Pool(Pool::Global { mode }) => {
            r.mode = mode_str(mode);
            r.global = Some(true);
        }
        LayerOp::Pool(Pool::Window {
            mode,
            kernel,
            stride,
            padding,
        }) => {
            r.mode = mode_str(mode);
            r.k = Some(kernel);
            r.stride = Some(stride);
            r.pad = Some(padding);
        }
        LayerOp::Fc {
            in_features,
            out_features,
        } => {
            r.in_ = Some(in_features);
            r.out = Some(out_features);
        }
        LayerOp::AddResidual { from } => r.from = Some(from),
        _ => {}
    }
    r
}

/// Parses and validates an architecture document.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or_else(|| parse_error(1, "empty document"))?;
    let header: Header = serde_json::from_str(header).map_err(|e| parse_error(line, format!("header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(parse_error(
            line,
            format!("format must be {FORMAT_NAME:?}, got {:?}", header.format),
        ));
    }
    if header.version != ARCH_FORMAT_VERSION {
        return Err(parse_error(
            line,
            format!(
                "unsupported version {} (expected {ARCH_FORMAT_VERSION})",
                header.version
            ),
        ));
    }
    let [c, h, w] = header.input;
    let mut spec = ArchSpec::new(header.name, Shape3::new(c, h, w));
    let mut names = std::collections::HashSet::new();
    for (line, text) in lines {
        let record: Record = serde_json::from_str(text).map_err(|e| parse_error(line, e.to_string()))?;
        if !names.insert(record.name.clone()) {
            return Err(parse_error(line, format!("duplicate layer name {:?}", record.name)));
        }
        spec.push(record_to_layer(record, line)?);
    }
    spec.validate()?;
    Ok(spec)
}

/// Serializes a spec; `parse_arch(&emit_arch(a)) == a` for every valid `a`
/// with unique layer names.
pub fn emit_arch(a: &ArchSpec) -> String {
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: ARCH_FORMAT_VERSION,
        name: a.name.clone(),
        input: [a.input.c, a.input.h, a.input.w],
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for l in &a.layers {
        out.push_str(&serde_json::to_string(&layer_to_record(l)).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{builtin, fuse_separable, hetconvify, separate, PartPolicy, Separable, BUILTIN_NAMES};

    #[test]
    fn builtins_round_trip() {
        for name in BUILTIN_NAMES {
            let a = builtin(name).unwrap();
            assert_eq!(parse_arch(&emit_arch(&a)).unwrap(), a, "{name}");
        }
        let vgg = builtin("vgg16-cifar").unwrap();
        for a in [
            hetconvify(&vgg, PartPolicy::Fixed(8), true).unwrap(),
            separate(&vgg, Separable::Grouped(4), true).unwrap(),
            fuse_separable(&builtin("mobilenet-cifar").unwrap(), PartPolicy::Fixed(32)).unwrap(),
        ] {
            assert_eq!(parse_arch(&emit_arch(&a)).unwrap(), a);
        }
    }

    #[test]
    fn exact_emitted_lines() {
        let a = builtin("resnet56-cifar").unwrap();
        let text = emit_arch(&a);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"format":"hetconv-arch","version":1,"name":"resnet56-cifar","input":[3,32,32]}"#
        );
        assert_eq!(
            lines[1],
            r#"{"name":"conv1","kind":"standard_conv","in":3,"out":16,"k":3,"stride":1,"pad":1}"#
        );
        assert_eq!(lines[4], r#"{"name":"s1.b1.add","kind":"add_residual","from":0}"#);
        assert!(text.contains(r#"{"name":"avgpool","kind":"pool","mode":"avg","global":true}"#));
    }

    const HEAD: &str = r#"{"format":"hetconv-arch","version":1,"name":"t","input":[8,6,6]}"#;

    fn doc(body: &str) -> String {
        format!("{HEAD}\n{body}\n")
    }

    #[test]
    fn unknown_kind_is_named() {
        let err = parse_arch(&doc(r#"{"name":"x","kind":"deformable","in":8,"out":8}"#)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("deformable"), "{err}");
    }

    #[test]
    fn bad_part_fails_validation() {
        let err = parse_arch(&doc(
            r#"{"name":"h","kind":"hetconv","in":8,"out":8,"k":3,"stride":1,"pad":1,"p":3}"#,
        ))
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Divisibility {
                    divisor: 3,
                    value: 8,
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("layer h"), "{err}");
    }

    #[test]
    fn field_diagnostics() {
        let cases = [
            (
                r#"{"name":"c","kind":"standard_conv","in":8,"out":8,"k":3,"stride":1}"#,
                "`pad`",
            ),
            (
                r#"{"name":"c","kind":"standard_conv","in":8,"out":8,"k":3,"stride":1,"pad":1,"p":2}"#,
                "`p`",
            ),
            (r#"{"name":"c","kind":"fc","in":8,"out":8,"colour":1}"#, "colour"),
            (
                r#"{"name":"c","kind":"pool","mode":"min","k":2,"stride":2,"pad":0}"#,
                "min",
            ),
            (r#"{"name":"c","kind":"pool","mode":"avg","global":true,"k":2}"#, "`k`"),
            (
                r#"{"name":"c","kind":"standard_conv","in":8,"out":8,"k":2,"stride":1,"pad":1}"#,
                "odd",
            ),
            (r#"{"name":"c","kind":"fc","in":"8","out":8}"#, "line 2"),
        ];
        for (body, needle) in cases {
            let err = parse_arch(&doc(body)).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(needle), "{body}: {msg}");
            assert!(msg.starts_with("line 2:"), "{body}: {msg}");
        }
    }

    #[test]
    fn header_checks_and_comments() {
        assert!(parse_arch("").is_err());
        assert!(parse_arch(r#"{"format":"other","version":1,"name":"t","input":[1,1,1]}"#).is_err());
        assert!(parse_arch(r#"{"format":"hetconv-arch","version":2,"name":"t","input":[1,1,1]}"#).is_err());
        let text = format!(
            "# comment\n\n{HEAD}\n# layers\n{}\n",
            r#"{"name":"p","kind":"pool","mode":"max","k":2,"stride":2,"pad":0}"#
        );
        let a = parse_arch(&text).unwrap();
        assert_eq!(a.output_shape().unwrap(), Shape3::new(8, 3, 3));
        let dup = doc(&format!(
            "{0}\n{0}",
            r#"{"name":"p","kind":"pool","mode":"max","k":1,"stride":1,"pad":0}"#
        ));
        assert!(parse_arch(&dup).unwrap_err().to_string().contains("duplicate"));
    }
}
