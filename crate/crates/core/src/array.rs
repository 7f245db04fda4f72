//! Array geometry and the subcarrier grid.
//!
//! A system is `B` boards, each carrying 2 rows by 4 columns of antennas.
//! Row 0 is the top row and column 0 the leftmost column when facing the
//! array. All coordinates are right-handed Cartesian, in meters.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const ROWS_PER_BOARD: usize = 2;
pub const COLS_PER_BOARD: usize = 4;
pub const ANTENNAS_PER_BOARD: usize = ROWS_PER_BOARD * COLS_PER_BOARD;

pub const DEFAULT_ELEMENT_SPACING: f64 = 0.06;
pub const DEFAULT_CARRIER_FREQUENCY: f64 = 2.462e9;
pub const DEFAULT_SUBCARRIER_SPACING: f64 = 312.5e3;
pub const DEFAULT_N_SUBCARRIERS: usize = 117;
pub const DEFAULT_SUBCARRIER_INDEX_OFFSET: i32 = -58;

const AXIS_TOLERANCE: f64 = 1e-9;

/// Placement of one board: center position and two in-plane unit axes.
///
/// `col_axis` points toward increasing column index, `row_axis` points up
/// (toward row 0). The broadside direction is `col_axis × row_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPose {
    pub center: Vec3,
    pub col_axis: Vec3,
    pub row_axis: Vec3,
}

impl BoardPose {
    pub fn new(center: Vec3, col_axis: Vec3, row_axis: Vec3) -> Result<Self> {
        let pose = BoardPose {
            center,
            col_axis,
            row_axis,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Vertical board at `center` whose broadside points along `normal`
    /// (projected onto the horizontal plane), with rows stacked along +z.
    pub fn facing(center: Vec3, normal: Vec3) -> Result<Self> {
        let horizontal = Vec3::new(normal.x, normal.y, 0.0);
        if horizontal.norm() < AXIS_TOLERANCE {
            return Err(Error::config("board normal has no horizontal component"));
        }
        let normal = horizontal.normalize();
        let row_axis = Vec3::z();
        let col_axis = row_axis.cross(&normal);
        BoardPose::new(center, col_axis, row_axis)
    }

    /// Unit broadside vector, pointing away from the front of the board.
    pub fn normal(&self) -> Vec3 {
        self.col_axis.cross(&self.row_axis)
    }

    /// Rigidly moves the board: rotation about the origin, then translation.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vec3) -> BoardPose {
        BoardPose {
            center: rotation * self.center + translation,
            col_axis: rotation * self.col_axis,
            row_axis: rotation * self.row_axis,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        if !finite(&self.center) || !finite(&self.col_axis) || !finite(&self.row_axis) {
            return Err(Error::config("board pose has non-finite components"));
        }
        if (self.col_axis.norm() - 1.0).abs() > AXIS_TOLERANCE {
            return Err(Error::config("board col_axis is not unit length"));
        }
        if (self.row_axis.norm() - 1.0).abs() > AXIS_TOLERANCE {
            return Err(Error::config("board row_axis is not unit length"));
        }
        if self.col_axis.dot(&self.row_axis).abs() > AXIS_TOLERANCE {
            return Err(Error::config("board row and column axes are not orthogonal"));
        }
        Ok(())
    }
}

/// Position of one antenna within the `(B, 2, 4)` element grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaIndex {
    pub board: usize,
    pub row: usize,
    pub col: usize,
}

impl AntennaIndex {
    pub const fn new(board: usize, row: usize, col: usize) -> Self {
        AntennaIndex { board, row, col }
    }

    /// Board-major flat index, matching the tensor memory order.
    pub const fn flat(&self) -> usize {
        (self.board * ROWS_PER_BOARD + self.row) * COLS_PER_BOARD + self.col
    }

    pub const fn from_flat(flat: usize) -> Self {
        AntennaIndex {
            board: flat / ANTENNAS_PER_BOARD,
            row: (flat / COLS_PER_BOARD) % ROWS_PER_BOARD,
            col: flat % COLS_PER_BOARD,
        }
    }
}

impl Default for AntennaIndex {
    fn default() -> Self {
        AntennaIndex::new(0, 0, 0)
    }
}

/// Geometry and radio grid of a multi-board array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArraySystem")]
pub struct ArraySystem {
    boards: Vec<BoardPose>,
    rows_per_board: usize,
    cols_per_board: usize,
    element_spacing: f64,
    carrier_frequency: f64,
    subcarrier_spacing: f64,
    n_subcarriers: usize,
    subcarrier_index_offset: i32,
}

#[derive(Deserialize)]
struct RawArraySystem {
    boards: Vec<BoardPose>,
    rows_per_board: usize,
    cols_per_board: usize,
    element_spacing: f64,
    carrier_frequency: f64,
    subcarrier_spacing: f64,
    n_subcarriers: usize,
    subcarrier_index_offset: i32,
}

impl TryFrom<RawArraySystem> for ArraySystem {
    type Error = Error;

    fn try_from(raw: RawArraySystem) -> Result<Self> {
        if raw.rows_per_board != ROWS_PER_BOARD || raw.cols_per_board != COLS_PER_BOARD {
            return Err(Error::config(format!(
                "boards must be {ROWS_PER_BOARD}x{COLS_PER_BOARD}, got {}x{}",
                raw.rows_per_board, raw.cols_per_board
            )));
        }
        ArraySystem::new(
            raw.boards,
            raw.element_spacing,
            raw.carrier_frequency,
            raw.subcarrier_spacing,
            raw.n_subcarriers,
            raw.subcarrier_index_offset,
        )
    }
}

impl ArraySystem {
    pub fn new(
        boards: Vec<BoardPose>,
        element_spacing: f64,
        carrier_frequency: f64,
        subcarrier_spacing: f64,
        n_subcarriers: usize,
        subcarrier_index_offset: i32,
    ) -> Result<Self> {
        if boards.is_empty() {
            return Err(Error::config("at least one board is required"));
        }
        if boards.len() > u8::MAX as usize + 1 {
            return Err(Error::config("at most 256 boards are supported"));
        }
        for pose in &boards {
            pose.validate()?;
        }
        if !(element_spacing > 0.0 && element_spacing.is_finite()) {
            return Err(Error::config("element_spacing must be positive"));
        }
        if !(carrier_frequency > 0.0 && carrier_frequency.is_finite()) {
            return Err(Error::config("carrier_frequency must be positive"));
        }
        if !(subcarrier_spacing > 0.0 && subcarrier_spacing.is_finite()) {
            return Err(Error::config("subcarrier_spacing must be positive"));
        }
        if n_subcarriers == 0 {
            return Err(Error::config("n_subcarriers must be at least 1"));
        }
        Ok(ArraySystem {
            boards,
            rows_per_board: ROWS_PER_BOARD,
            cols_per_board: COLS_PER_BOARD,
            element_spacing,
            carrier_frequency,
            subcarrier_spacing,
            n_subcarriers,
            subcarrier_index_offset,
        })
    }

    /// Boards with the default 2.4 GHz HT20 grid (117 subcarriers around
    /// 2.462 GHz) and 6 cm element pitch.
    pub fn with_boards(boards: Vec<BoardPose>) -> Result<Self> {
        ArraySystem::new(
            boards,
            DEFAULT_ELEMENT_SPACING,
            DEFAULT_CARRIER_FREQUENCY,
            DEFAULT_SUBCARRIER_SPACING,
            DEFAULT_N_SUBCARRIERS,
            DEFAULT_SUBCARRIER_INDEX_OFFSET,
        )
    }

    pub fn boards(&self) -> &[BoardPose] {
        &self.boards
    }

    pub fn board(&self, board: usize) -> Result<&BoardPose> {
        self.boards.get(board).ok_or(Error::IndexOutOfBounds {
            axis: "board",
            index: board,
            len: self.boards.len(),
        })
    }

    pub fn n_boards(&self) -> usize {
        self.boards.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.boards.len() * ANTENNAS_PER_BOARD
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn element_spacing(&self) -> f64 {
        self.element_spacing
    }

    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.subcarrier_spacing
    }

    pub fn subcarrier_index_offset(&self) -> i32 {
        self.subcarrier_index_offset
    }

    /// Same geometry on a different subcarrier grid.
    pub fn with_grid(
        &self,
        subcarrier_spacing: f64,
        n_subcarriers: usize,
        subcarrier_index_offset: i32,
    ) -> Result<Self> {
        ArraySystem::new(
            self.boards.clone(),
            self.element_spacing,
            self.carrier_frequency,
            subcarrier_spacing,
            n_subcarriers,
            subcarrier_index_offset,
        )
    }

    pub fn check_antenna(&self, idx: AntennaIndex) -> Result<()> {
        let checks = [
            ("board", idx.board, self.boards.len()),
            ("row", idx.row, ROWS_PER_BOARD),
            ("col", idx.col, COLS_PER_BOARD),
        ];
        for (axis, index, len) in checks {
            if index >= len {
                return Err(Error::IndexOutOfBounds { axis, index, len });
            }
        }
        Ok(())
    }

    /// Antenna position: board center plus column and row offsets about the
    /// board's geometric center.
    pub fn antenna_position(&self, board: usize, row: usize, col: usize) -> Result<Vec3> {
        self.check_antenna(AntennaIndex::new(board, row, col))?;
        let pose = &self.boards[board];
        let col_offset = (col as f64 - 1.5) * self.element_spacing;
        let row_offset = (0.5 - row as f64) * self.element_spacing;
        Ok(pose.center + pose.col_axis * col_offset + pose.row_axis * row_offset)
    }

    /// All antenna positions in flat (board, row, col) order.
    pub fn antenna_positions(&self) -> Vec<Vec3> {
        (0..self.n_antennas())
            .map(|flat| {
                let a = AntennaIndex::from_flat(flat);
                self.antenna_position(a.board, a.row, a.col)
                    .expect("flat index within bounds")
            })
            .collect()
    }

    pub fn subcarrier_frequency(&self, n: usize) -> Result<f64> {
        if n >= self.n_subcarriers {
            return Err(Error::IndexOutOfBounds {
                axis: "subcarrier",
                index: n,
                len: self.n_subcarriers,
            });
        }
        Ok(self.carrier_frequency + (self.subcarrier_index_offset as f64 + n as f64) * self.subcarrier_spacing)
    }

    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        (0..self.n_subcarriers)
            .map(|n| self.subcarrier_frequency(n).expect("in range"))
            .collect()
    }

    /// Azimuth of `point` seen from `board`: angle from broadside, positive
    /// toward the column axis, measured in the board's horizontal plane.
    pub fn azimuth_of(&self, board: usize, point: &Vec3) -> Result<f64> {
        let pose = self.board(board)?;
        let rel = point - pose.center;
        Ok(rel.dot(&pose.col_axis).atan2(rel.dot(&pose.normal())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_3;

    fn single_board() -> ArraySystem {
        let pose = BoardPose::new(Vec3::zeros(), Vec3::x(), Vec3::y()).unwrap();
        ArraySystem::with_boards(vec![pose]).unwrap()
    }

    #[test]
    fn top_left_antenna_position() {
        let sys = single_board();
        let p = sys.antenna_position(0, 0, 0).unwrap();
        assert!((p - Vec3::new(-0.09, 0.03, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn board_antennas_centered_and_coplanar() {
        let pose = BoardPose::facing(Vec3::new(1.0, 2.0, 0.5), Vec3::new(1.0, -1.0, 0.0)).unwrap();
        let sys = ArraySystem::with_boards(vec![pose]).unwrap();
        let positions = sys.antenna_positions();
        let mean = positions.iter().fold(Vec3::zeros(), |acc, p| acc + p) / 8.0;
        assert!((mean - pose.center).norm() < 1e-12);
        for p in &positions {
            assert!((p - pose.center).dot(&pose.normal()).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_names_axis() {
        let sys = single_board();
        for (b, r, c, axis) in [(1, 0, 0, "board"), (0, 2, 0, "row"), (0, 0, 4, "col")] {
            match sys.antenna_position(b, r, c) {
                Err(Error::IndexOutOfBounds { axis: a, .. }) => assert_eq!(a, axis),
                other => panic!("expected out-of-bounds, got {other:?}"),
            }
        }
    }

    #[test]
    fn subcarrier_grid() {
        let sys = single_board();
        assert_eq!(sys.subcarrier_frequency(58).unwrap(), 2.462e9);
        assert_eq!(sys.subcarrier_frequency(0).unwrap(), 2.462e9 - 58.0 * 312.5e3);
        let f = sys.subcarrier_frequencies();
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(sys.subcarrier_frequency(117).is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(BoardPose::new(Vec3::zeros(), Vec3::x() * 2.0, Vec3::y()).is_err());
        assert!(BoardPose::new(Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0).normalize()).is_err());
        assert!(ArraySystem::with_boards(vec![]).is_err());
        let pose = BoardPose::new(Vec3::zeros(), Vec3::x(), Vec3::y()).unwrap();
        assert!(ArraySystem::new(vec![pose], 0.0, 2.4e9, 312.5e3, 117, -58).is_err());
        assert!(ArraySystem::new(vec![pose], 0.06, 2.4e9, 312.5e3, 0, -58).is_err());
    }

    #[test]
    fn serde_validates() {
        let sys = single_board();
        let json = serde_json::to_string(&sys).unwrap();
        let back: ArraySystem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sys);
        let broken = json.replace("\"n_subcarriers\":117", "\"n_subcarriers\":0");
        assert!(serde_json::from_str::<ArraySystem>(&broken).is_err());
    }

    #[test]
    fn azimuth_convention() {
        let sys = single_board();
        // broadside of a board with col=x, row=y is +z
        let az = sys
            .azimuth_of(0, &Vec3::new(FRAC_PI_3.sin(), 0.0, FRAC_PI_3.cos()))
            .unwrap();
        assert!((az - FRAC_PI_3).abs() < 1e-12);
    }
}
