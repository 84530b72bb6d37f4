"""Exception hierarchy shared by every module."""


class LorentzLabError(Exception):
    """Base class for all errors raised by lorentz_lab."""


class Tangency(LorentzLabError):
    """A trajectory grazes a scatterer within the tangency tolerance."""


class Escape(LorentzLabError):
    """No collision was found among the scatterers provided."""


class CornerCrossing(LorentzLabError):
    """A trajectory leaves a lattice cell through (or too near) a vertex."""


class Overlap(LorentzLabError):
    """An added or sampled scatterer touches or intersects another one."""


class MarginViolation(LorentzLabError):
    """A random scatterer comes closer to the cell boundary than allowed."""


class ExcessiveSingularity(LorentzLabError):
    """Too many sampled trajectories were discarded as singular."""


class SchemaError(LorentzLabError):
    """A configuration file or experiment spec does not validate."""
