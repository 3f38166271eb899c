use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub const LAYOUT_SCHEMA_VERSION: u32 = 1;

/// What a keyboard button commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ButtonAction {
    #[serde(rename = "LIN_X+")]
    LinXPos,
    #[serde(rename = "LIN_X-")]
    LinXNeg,
    #[serde(rename = "LIN_Y+")]
    LinYPos,
    #[serde(rename = "LIN_Y-")]
    LinYNeg,
    #[serde(rename = "LIN_Z+")]
    LinZPos,
    #[serde(rename = "LIN_Z-")]
    LinZNeg,
    #[serde(rename = "YAW+")]
    YawPos,
    #[serde(rename = "YAW-")]
    YawNeg,
    #[serde(rename = "GRIP_OPEN")]
    GripOpen,
    #[serde(rename = "GRIP_CLOSE")]
    GripClose,
}

impl ButtonAction {
    pub const ALL: [ButtonAction; 10] = [
        ButtonAction::LinXPos,
        ButtonAction::LinXNeg,
        ButtonAction::LinYPos,
        ButtonAction::LinYNeg,
        ButtonAction::LinZPos,
        ButtonAction::LinZNeg,
        ButtonAction::YawPos,
        ButtonAction::YawNeg,
        ButtonAction::GripOpen,
        ButtonAction::GripClose,
    ];

    pub fn is_gripper(self) -> bool {
        matches!(self, ButtonAction::GripOpen | ButtonAction::GripClose)
    }

    /// Unit direction of a velocity button: `(linear axis, sign)` or `(None, sign)` for yaw.
    pub fn axis(self) -> Option<(Option<usize>, f64)> {
        use ButtonAction::*;
        match self {
            LinXPos => Some((Some(0), 1.0)),
            LinXNeg => Some((Some(0), -1.0)),
            LinYPos => Some((Some(1), 1.0)),
            LinYNeg => Some((Some(1), -1.0)),
            LinZPos => Some((Some(2), 1.0)),
            LinZNeg => Some((Some(2), -1.0)),
            YawPos => Some((None, 1.0)),
            YawNeg => Some((None, -1.0)),
            GripOpen | GripClose => None,
        }
    }

    pub fn label(self) -> &'static str {
        use ButtonAction::*;
        match self {
            LinXPos => "LIN_X+",
            LinXNeg => "LIN_X-",
            LinYPos => "LIN_Y+",
            LinYNeg => "LIN_Y-",
            LinZPos => "LIN_Z+",
            LinZNeg => "LIN_Z-",
            YawPos => "YAW+",
            YawNeg => "YAW-",
            GripOpen => "GRIP_OPEN",
            GripClose => "GRIP_CLOSE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Button {
    pub id: String,
    pub action: ButtonAction,
    /// Rectangle centre in the keyboard_base frame, m.
    pub center: [f64; 2],
    /// Width (keyboard x) and height (keyboard y), m.
    pub size: [f64; 2],
}

impl Button {
    /// Closed rectangle membership in keyboard coordinates.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= 0.5 * self.size[0]
            && (y - self.center[1]).abs() <= 0.5 * self.size[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutFile {
    pub version: u32,
    pub buttons: Vec<Button>,
}

/// Button rectangles on the keyboard plane (the plane pose lives in the scene).
#[derive(Debug, Clone, PartialEq)]
pub struct KeyboardLayout {
    pub buttons: Vec<Button>,
}

impl KeyboardLayout {
    pub fn from_file(file: LayoutFile) -> Result<Self> {
        if file.version != LAYOUT_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "keyboard layout version {} unsupported",
                file.version
            )));
        }
        for b in &file.buttons {
            if !(b.size[0] > 0.0 && b.size[1] > 0.0) {
                return Err(Error::invalid(format!("button {} has non-positive size", b.id)));
            }
        }
        for (i, a) in file.buttons.iter().enumerate() {
            for b in &file.buttons[i + 1..] {
                if a.id == b.id {
                    return Err(Error::invalid(format!("duplicate button id {}", a.id)));
                }
                let dx = (a.center[0] - b.center[0]).abs();
                let dy = (a.center[1] - b.center[1]).abs();
                if dx <= 0.5 * (a.size[0] + b.size[0]) && dy <= 0.5 * (a.size[1] + b.size[1]) {
                    return Err(Error::invalid(format!(
                        "buttons {} and {} overlap",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(KeyboardLayout {
            buttons: file.buttons,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LayoutFile =
            serde_json::from_str(text).map_err(|e| Error::schema(e.to_string()))?;
        Self::from_file(file)
    }

    /// Two rows of five 0.105 m x 0.099 m buttons: linear x/y/z, yaw and gripper.
    pub fn default_layout() -> Self {
        Self::from_json(include_str!("../../assets/keyboard/default_layout.json"))
            .expect("built-in keyboard layout is valid")
    }

    pub fn to_file(&self) -> LayoutFile {
        LayoutFile {
            version: LAYOUT_SCHEMA_VERSION,
            buttons: self.buttons.clone(),
        }
    }

    pub fn button(&self, id: &str) -> Option<&Button> {
        self.buttons.iter().find(|b| b.id == id)
    }

    pub fn by_action(&self, action: ButtonAction) -> Option<&Button> {
        self.buttons.iter().find(|b| b.action == action)
    }

    pub fn button_at(&self, x: f64, y: f64) -> Option<&Button> {
        self.buttons.iter().find(|b| b.contains(x, y))
    }

    /// Half extents of the panel enclosing all buttons, centred on keyboard_base.
    pub fn half_extents(&self) -> (f64, f64) {
        let mut hx: f64 = 0.0;
        let mut hy: f64 = 0.0;
        for b in &self.buttons {
            hx = hx.max(b.center[0].abs() + 0.5 * b.size[0]);
            hy = hy.max(b.center[1].abs() + 0.5 * b.size[1]);
        }
        (hx + 0.01, hy + 0.01)
    }

    /// World position of a button centre given the keyboard plane pose.
    pub fn button_center_world(&self, pose: &Pose, id: &str) -> Option<Point3<f64>> {
        self.button(id)
            .map(|b| pose * Point3::new(b.center[0], b.center[1], 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_has_ten_disjoint_buttons() {
        let l = KeyboardLayout::default_layout();
        assert_eq!(l.buttons.len(), 10);
        for a in ButtonAction::ALL {
            let b = l.by_action(a).unwrap();
            assert_eq!(b.size, [0.105, 0.099]);
        }
    }

    #[test]
    fn overlapping_buttons_rejected() {
        let mut f = KeyboardLayout::default_layout().to_file();
        f.buttons[1].center = f.buttons[0].center;
        assert!(KeyboardLayout::from_file(f).is_err());
    }
}
