//! Scene description: textured planes and spheres, a point light, and the
//! rendering camera. Includes the key=value scene file format.

use crate::camera::PinholeIntrinsics;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("shading vectors must be unit length (|{0}| = {1})")]
    NonUnitVector(&'static str, f64),
    #[error("scene file error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Phong reflection coefficients plus a procedural albedo texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub k_a: f64,
    pub k_d: f64,
    pub k_s: f64,
    /// specular exponent, >= 1
    pub shininess: f64,
    pub texture_seed: u64,
    /// noise lattice cells per surface unit
    pub texture_scale: f64,
}

impl Material {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.k_a < 0.0 || self.k_d < 0.0 || self.k_s < 0.0 {
            return Err(SynthError::Invalid("negative reflection coefficient".into()));
        }
        if self.shininess < 1.0 {
            return Err(SynthError::Invalid(format!(
                "shininess {} < 1",
                self.shininess
            )));
        }
        Ok(())
    }
}

/// Renderable primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneObject {
    Plane {
        center: Vector3<f64>,
        /// in-plane axes; normal is u x v
        u_axis: Vector3<f64>,
        v_axis: Vector3<f64>,
        half_u: f64,
        half_v: f64,
        material: Material,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        material: Material,
    },
}

impl SceneObject {
    pub fn material(&self) -> &Material {
        match self {
            SceneObject::Plane { material, .. } => material,
            SceneObject::Sphere { material, .. } => material,
        }
    }
}

/// Complete scene: objects, one point light, ambient term, and camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub light_position: Vector3<f64>,
    /// I_direct
    pub light_intensity: f64,
    /// I_a
    pub ambient_intensity: f64,
    pub camera: PinholeIntrinsics,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.objects.is_empty() {
            return Err(SynthError::Invalid("scene has no objects".into()));
        }
        if self.light_intensity < 0.0 || self.ambient_intensity < 0.0 {
            return Err(SynthError::Invalid("negative light intensity".into()));
        }
        for o in &self.objects {
            o.material().validate()?;
        }
        Ok(())
    }

    /// Parses the sectioned key=value scene format:
    ///
    /// ```text
    /// [camera]
    /// fx = 400  fy = 400  cx = 320  cy = 240  width = 640  height = 480
    /// [light]
    /// x = 0.5  y = -0.8  z = -0.5  intensity = 160  ambient = 120
    /// [plane]
    /// cx = 0  cy = 0  cz = 1
    /// ux = 1  uy = 0  uz = 0  vx = 0  vy = 1  vz = 0
    /// half_u = 3  half_v = 3
    /// ka = 0.4  kd = 0.9  ks = 0.15  n = 8  seed = 1  tex_scale = 6
    /// [sphere]
    /// cx = 0.2  cy = 0  cz = 0.8  radius = 0.2
    /// ka = 0.5  kd = 0.8  ks = 0.4  n = 16  seed = 2  tex_scale = 10
    /// ```
    pub fn parse(text: &str) -> Result<SceneSpec, SynthError> {
        use std::collections::HashMap;
        let mut sections: Vec<(String, HashMap<String, f64>)> = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                sections.push((line[1..line.len() - 1].to_ascii_lowercase(), HashMap::new()));
                continue;
            }
            let current = sections
                .last_mut()
                .ok_or_else(|| SynthError::Parse("key before any [section]".into()))?;
            for pair in line.split(|c| c == ';' || c == ',') {
                let pair = pair.trim();
                if pair.is_empty() {
                    continue;
                }
                let mut it = pair.splitn(2, '=');
                let key = it.next().unwrap_or("").trim().to_ascii_lowercase();
                let value: f64 = it
                    .next()
                    .ok_or_else(|| SynthError::Parse(format!("missing '=' in `{pair}`")))?
                    .trim()
                    .parse()
                    .map_err(|e| SynthError::Parse(format!("bad number for `{key}`: {e}")))?;
                current.1.insert(key, value);
            }
        }

        let get = |map: &HashMap<String, f64>, k: &str| -> Result<f64, SynthError> {
            map.get(k)
                .copied()
                .ok_or_else(|| SynthError::Parse(format!("missing key `{k}`")))
        };
        let material = |map: &HashMap<String, f64>| -> Result<Material, SynthError> {
            Ok(Material {
                k_a: get(map, "ka")?,
                k_d: get(map, "kd")?,
                k_s: get(map, "ks")?,
                shininess: get(map, "n")?,
                texture_seed: get(map, "seed")? as u64,
                texture_scale: map.get("tex_scale").copied().unwrap_or(6.0),
            })
        };

        let mut camera = None;
        let mut light_position = Vector3::zeros();
        let mut light_intensity = 0.0;
        let mut ambient_intensity = 0.0;
        let mut objects = Vec::new();
        for (name, map) in &sections {
            match name.as_str() {
                "camera" => {
                    camera = Some(
                        PinholeIntrinsics::new(
                            get(map, "fx")?,
                            get(map, "fy")?,
                            get(map, "cx")?,
                            get(map, "cy")?,
                            get(map, "width")? as usize,
                            get(map, "height")? as usize,
                        )
                        .map_err(|e| SynthError::Parse(e.to_string()))?,
                    );
                }
                "light" => {
                    light_position =
                        Vector3::new(get(map, "x")?, get(map, "y")?, get(map, "z")?);
                    light_intensity = get(map, "intensity")?;
                    ambient_intensity = map.get("ambient").copied().unwrap_or(0.0);
                }
                "plane" => {
                    objects.push(SceneObject::Plane {
                        center: Vector3::new(get(map, "cx")?, get(map, "cy")?, get(map, "cz")?),
                        u_axis: Vector3::new(get(map, "ux")?, get(map, "uy")?, get(map, "uz")?),
                        v_axis: Vector3::new(get(map, "vx")?, get(map, "vy")?, get(map, "vz")?),
                        half_u: get(map, "half_u")?,
                        half_v: get(map, "half_v")?,
                        material: material(map)?,
                    });
                }
                "sphere" => {
                    objects.push(SceneObject::Sphere {
                        center: Vector3::new(get(map, "cx")?, get(map, "cy")?, get(map, "cz")?),
                        radius: get(map, "radius")?,
                        material: material(map)?,
                    });
                }
                other => return Err(SynthError::Parse(format!("unknown section [{other}]"))),
            }
        }
        let scene = SceneSpec {
            objects,
            light_position,
            light_intensity,
            ambient_intensity,
            camera: camera.ok_or_else(|| SynthError::Parse("missing [camera] section".into()))?,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &std::path::Path) -> Result<SceneSpec, SynthError> {
        SceneSpec::parse(&std::fs::read_to_string(path)?)
    }
}
