class DualMesh: pass
def build_dual(*a, **k): raise NotImplementedError
