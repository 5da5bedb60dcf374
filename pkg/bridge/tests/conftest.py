import pytest

pytest.importorskip("fex_bridge", reason="secondary component not installed")
