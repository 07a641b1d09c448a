import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


class FakeClock:
    """Monotonic clock under test control. sleep() advances it."""

    def __init__(self, start=0.0):
        self.t = start

    def __call__(self):
        return self.t

    def sleep(self, dt):
        self.t += max(dt, 0.0)

    def advance(self, dt):
        self.t += dt
