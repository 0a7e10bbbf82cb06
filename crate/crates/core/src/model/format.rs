//! Text format for robot models.
//!
//! A model file is UTF-8 text organized in sections. `[link <name>]` and
//! `[joint <name>]` sections hold `key = value` lines; `[feet]` maps foot
//! names to a link and an offset; `[gravity]` holds the gravity vector.
//! Transforms are written as 3 translation numbers followed by a unit
//! quaternion in scalar-last order. See `docs/model_format.md` for the
//! grammar.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::math::{quat_from_xyzw, quat_to_xyzw};

use super::{
    JointSpec, JointType, LinkSpec, ModelError, ParseError, RobotModel, ValidationError,
};

/// Load and validate a model from a file.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<RobotModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(ParseError::Io)?;
    parse_model(&text)
}

/// Parse and validate a model from its text form.
pub fn parse_model(text: &str) -> Result<RobotModel, ModelError> {
    let raw = RawModel::parse(text)?;
    raw.build().map_err(ModelError::from)
}

/// Serialize a model to its text form. `parse_model(write_model_string(m))`
/// reproduces `m` bit-exactly on all numeric fields.
pub fn write_model_string(model: &RobotModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[gravity]");
    let g = model.gravity();
    let _ = writeln!(out, "vector = {} {} {}", g.x, g.y, g.z);

    for link in model.links() {
        let _ = writeln!(out, "\n[link {}]", link.name);
        let _ = writeln!(out, "mass = {}", link.mass);
        let c = link.com_offset;
        let _ = writeln!(out, "com = {} {} {}", c.x, c.y, c.z);
        let i = link.rotational_inertia;
        let _ = writeln!(
            out,
            "inertia = {} {} {} {} {} {}",
            i[(0, 0)],
            i[(1, 1)],
            i[(2, 2)],
            i[(0, 1)],
            i[(0, 2)],
            i[(1, 2)]
        );
    }

    for joint in model.joints() {
        let _ = writeln!(out, "\n[joint {}]", joint.name);
        let kind = match joint.joint_type {
            JointType::Floating => "floating",
            JointType::Revolute => "revolute",
        };
        let _ = writeln!(out, "type = {kind}");
        let _ = writeln!(out, "parent = {}", joint.parent);
        let _ = writeln!(out, "child = {}", joint.child);
        if joint.joint_type == JointType::Revolute {
            let a = joint.axis;
            let _ = writeln!(out, "axis = {} {} {}", a.x, a.y, a.z);
        }
        let t = joint.placement_translation;
        let [qx, qy, qz, qw] = quat_to_xyzw(&joint.placement_rotation);
        let _ = writeln!(out, "placement = {} {} {} {} {} {} {}", t.x, t.y, t.z, qx, qy, qz, qw);
    }

    let _ = writeln!(out, "\n[feet]");
    for foot in model.foot_frames() {
        let link = &model.links()[foot.link].name;
        let o = foot.offset;
        let _ = writeln!(out, "{} = {} {} {} {}", foot.name, link, o.x, o.y, o.z);
    }
    out
}

/// Write a model to a file in the text format.
pub fn save_model<P: AsRef<Path>>(model: &RobotModel, path: P) -> std::io::Result<()> {
    std::fs::write(path, write_model_string(model))
}

#[derive(Default)]
struct RawModel {
    gravity: Option<Vector3<f64>>,
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    feet: Vec<(String, String, Vector3<f64>)>,
}

enum Section {
    None,
    Gravity,
    Link(usize),
    Joint(usize),
    Feet,
}

#[derive(Default)]
struct PartialJoint {
    name: String,
    joint_type: Option<JointType>,
    parent: Option<String>,
    child: Option<String>,
    axis: Option<Vector3<f64>>,
    placement: Option<(Vector3<f64>, UnitQuaternion<f64>)>,
}

impl RawModel {
    fn parse(text: &str) -> Result<RawModel, ParseError> {
        let mut raw = RawModel::default();
        let mut partial_links: Vec<(usize, PartialLink)> = Vec::new();
        let mut partial_joints: Vec<(usize, PartialJoint)> = Vec::new();
        let mut section = Section::None;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }

            if let Some(header) = line.strip_prefix('[') {
                let header = header.strip_suffix(']').ok_or_else(|| ParseError::Syntax {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                let mut parts = header.split_whitespace();
                section = match (parts.next(), parts.next(), parts.next()) {
                    (Some("gravity"), None, _) => Section::Gravity,
                    (Some("feet"), None, _) => Section::Feet,
                    (Some("link"), Some(name), None) => {
                        partial_links.push((line_no, PartialLink::new(name)));
                        Section::Link(partial_links.len() - 1)
                    }
                    (Some("joint"), Some(name), None) => {
                        partial_joints.push((
                            line_no,
                            PartialJoint {
                                name: name.to_string(),
                                ..Default::default()
                            },
                        ));
                        Section::Joint(partial_joints.len() - 1)
                    }
                    _ => {
                        return Err(ParseError::Syntax {
                            line: line_no,
                            message: format!("unknown section header '[{header}]'"),
                        })
                    }
                };
                continue;
            }

            let (key, value) = line.split_once('=').ok_or_else(|| ParseError::Syntax {
                line: line_no,
                message: "expected 'key = value'".into(),
            })?;
            let key = key.trim();
            let value = value.trim();

            match section {
                Section::None => {
                    return Err(ParseError::Syntax {
                        line: line_no,
                        message: "key/value outside any section".into(),
                    })
                }
                Section::Gravity => {
                    if key != "vector" {
                        return Err(ParseError::Syntax {
                            line: line_no,
                            message: format!("unknown gravity key '{key}'"),
                        });
                    }
                    raw.gravity = Some(parse_vec3(value, line_no)?);
                }
                Section::Link(i) => partial_links[i].1.set(key, value, line_no)?,
                Section::Joint(i) => partial_joints[i].1.set(key, value, line_no)?,
                Section::Feet => {
                    let fields: Vec<&str> = value.split_whitespace().collect();
                    if fields.len() != 4 {
                        return Err(ParseError::Syntax {
                            line: line_no,
                            message: "foot entry needs 'link x y z'".into(),
                        });
                    }
                    let offset = Vector3::new(
                        parse_float(fields[1], line_no)?,
                        parse_float(fields[2], line_no)?,
                        parse_float(fields[3], line_no)?,
                    );
                    raw.feet.push((key.to_string(), fields[0].to_string(), offset));
                }
            }
        }

        for (line, partial) in partial_links {
            raw.links.push(partial.finish(line)?);
        }
        for (line, partial) in partial_joints {
            raw.joints.push(partial.finish(line)?);
        }
        Ok(raw)
    }

    fn build(self) -> Result<RobotModel, ValidationError> {
        let gravity = self.gravity.unwrap_or_else(|| Vector3::new(0.0, 0.0, -9.81));
        RobotModel::new(self.links, self.joints, self.feet, gravity)
    }
}

struct PartialLink {
    name: String,
    mass: Option<f64>,
    com: Option<Vector3<f64>>,
    inertia: Option<Matrix3<f64>>,
}

impl PartialLink {
    fn new(name: &str) -> Self {
        PartialLink {
            name: name.to_string(),
            mass: None,
            com: None,
            inertia: None,
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ParseError> {
        match key {
            "mass" => self.mass = Some(parse_float(value, line)?),
            "com" => self.com = Some(parse_vec3(value, line)?),
            "inertia" => {
                let v = parse_floats(value, 6, line)?;
                self.inertia = Some(Matrix3::new(
                    v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2],
                ));
            }
            _ => {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("unknown link key '{key}'"),
                })
            }
        }
        Ok(())
    }

    fn finish(self, line: usize) -> Result<LinkSpec, ParseError> {
        let missing = |field: &str| ParseError::Syntax {
            line,
            message: format!("link '{}' is missing '{field}'", self.name),
        };
        Ok(LinkSpec {
            mass: self.mass.ok_or_else(|| missing("mass"))?,
            com_offset: self.com.ok_or_else(|| missing("com"))?,
            rotational_inertia: self.inertia.ok_or_else(|| missing("inertia"))?,
            name: self.name,
        })
    }
}

impl PartialJoint {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ParseError> {
        match key {
            "type" => {
                self.joint_type = Some(match value {
                    "floating" => JointType::Floating,
                    "revolute" => JointType::Revolute,
                    other => {
                        return Err(ParseError::Syntax {
                            line,
                            message: format!(
                                "unsupported joint type '{other}' (expected floating or revolute)"
                            ),
                        })
                    }
                })
            }
            "parent" => self.parent = Some(value.to_string()),
            "child" => self.child = Some(value.to_string()),
            "axis" => self.axis = Some(parse_vec3(value, line)?),
            "placement" => {
                let v = parse_floats(value, 7, line)?;
                let q = quat_from_xyzw(v[3], v[4], v[5], v[6]);
                let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(ParseError::Syntax {
                        line,
                        message: format!("placement quaternion must be unit, norm is {norm}"),
                    });
                }
                self.placement = Some((Vector3::new(v[0], v[1], v[2]), q));
            }
            _ => {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("unknown joint key '{key}'"),
                })
            }
        }
        Ok(())
    }

    fn finish(self, line: usize) -> Result<JointSpec, ParseError> {
        let missing = |field: &str| ParseError::Syntax {
            line,
            message: format!("joint '{}' is missing '{field}'", self.name),
        };
        let joint_type = self.joint_type.ok_or_else(|| missing("type"))?;
        if joint_type == JointType::Revolute && self.axis.is_none() {
            return Err(missing("axis"));
        }
        let (translation, rotation) = self
            .placement
            .unwrap_or((Vector3::zeros(), UnitQuaternion::identity()));
        Ok(JointSpec {
            parent: self.parent.ok_or_else(|| missing("parent"))?,
            child: self.child.ok_or_else(|| missing("child"))?,
            joint_type,
            axis: self.axis.unwrap_or_else(Vector3::zeros),
            placement_translation: translation,
            placement_rotation: rotation,
            name: self.name,
        })
    }
}

fn parse_float(s: &str, line: usize) -> Result<f64, ParseError> {
    s.parse().map_err(|_| ParseError::Syntax {
        line,
        message: format!("expected a number, got '{s}'"),
    })
}

fn parse_floats(s: &str, count: usize, line: usize) -> Result<Vec<f64>, ParseError> {
    let vals: Result<Vec<f64>, _> = s.split_whitespace().map(|t| parse_float(t, line)).collect();
    let vals = vals?;
    if vals.len() != count {
        return Err(ParseError::Syntax {
            line,
            message: format!("expected {count} numbers, got {}", vals.len()),
        });
    }
    Ok(vals)
}

fn parse_vec3(s: &str, line: usize) -> Result<Vector3<f64>, ParseError> {
    let v = parse_floats(s, 3, line)?;
    Ok(Vector3::new(v[0], v[1], v[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_quadruped;

    fn models_equal(a: &RobotModel, b: &RobotModel) -> bool {
        a.links() == b.links()
            && a.joints() == b.joints()
            && a.foot_frames() == b.foot_frames()
            && a.gravity() == b.gravity()
    }

    #[test]
    fn default_round_trips_bit_exact() {
        let model = default_quadruped();
        let text = write_model_string(&model);
        let reparsed = parse_model(&text).unwrap();
        assert!(models_equal(&model, &reparsed));
        // and a second round trip produces identical text
        assert_eq!(text, write_model_string(&reparsed));
    }

    #[test]
    fn loads_default_quadruped_shape() {
        let text = write_model_string(&default_quadruped());
        let model = parse_model(&text).unwrap();
        assert_eq!(model.n_joints(), 12);
        assert_eq!(model.n_feet(), 4);
    }

    #[test]
    fn single_rigid_body_file() {
        let text = "\
[gravity]
vector = 0 0 -9.81

[link body]
mass = 2
com = 0 0 0.1
inertia = 0.1 0.1 0.1 0 0 0

[joint root]
type = floating
parent = world
child = body
placement = 0 0 0 0 0 0 1
";
        let model = parse_model(text).unwrap();
        assert_eq!(model.n_joints(), 0);
        assert_eq!(model.total_mass(), 2.0);
    }

    #[test]
    fn negative_mass_names_link() {
        let mut text = write_model_string(&default_quadruped());
        text = text.replace("mass = 0.05", "mass = -0.05");
        let err = parse_model(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mass"), "message: {msg}");
        assert!(msg.contains("lower"), "message should name the link: {msg}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "[gravity]\nvector = 0 0\n";
        match parse_model(text) {
            Err(ModelError::Parse(ParseError::Syntax { line, .. })) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn prismatic_is_rejected() {
        let mut text = write_model_string(&default_quadruped());
        text = text.replace("type = revolute", "type = prismatic");
        assert!(parse_model(&text).is_err());
    }
}
