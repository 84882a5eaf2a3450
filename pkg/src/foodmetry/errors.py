"""Exception types shared across the toolkit."""


class FoodmetryError(ValueError):
    """Base class for all toolkit errors."""


class MeshFormatError(FoodmetryError):
    """A mesh file could not be parsed.

    Carries the file path plus a line number (text formats) or byte
    offset (binary formats) pointing at the offending location.
    """

    def __init__(self, path, message, line=None, byte_offset=None):
        loc = ""
        if line is not None:
            loc = f", line {line}"
        elif byte_offset is not None:
            loc = f", byte {byte_offset}"
        super().__init__(f"{path}{loc}: {message}")
        self.path = str(path)
        self.line = line
        self.byte_offset = byte_offset


class MeshStructureError(FoodmetryError):
    """Mesh connectivity violates a structural invariant."""


class MeshOrientationError(MeshStructureError):
    """Face windings of a closed mesh are not consistently oriented."""


class BundleParseError(FoodmetryError):
    """A camera/pose/point bundle file could not be parsed."""


class UnsupportedCameraModelError(BundleParseError):
    """Bundle declares a camera model this toolkit does not handle."""


class DegenerateGeometryError(FoodmetryError):
    """Input geometry has too little rank for the requested operation."""


class NoVisiblePointError(FoodmetryError):
    """Every candidate point projects behind the camera."""


class CapBaseError(FoodmetryError):
    """A boundary loop could not be capped against the support plane."""

    def __init__(self, loop_index, message):
        super().__init__(f"loop {loop_index}: {message}")
        self.loop_index = loop_index


class ScaleEstimationError(FoodmetryError):
    """No image yielded enough reference corners to estimate scale."""

    def __init__(self, corner_counts):
        detail = ", ".join(f"{name}: {n}" for name, n in corner_counts.items())
        super().__init__(
            "scale estimation failed, need at least 2 matched corners in "
            f"at least one image (per-image corner counts: {detail or 'none'})"
        )
        self.corner_counts = dict(corner_counts)
