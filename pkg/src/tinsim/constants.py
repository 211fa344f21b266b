"""Physical constants (CODATA 2018), fixed to 12 significant figures."""

HBAR = 1.05457181765e-34  # J s
K_B = 1.38064900000e-23  # J / K
C_LIGHT = 2.99792458000e8  # m / s

TWO_PI = 6.28318530717958648
