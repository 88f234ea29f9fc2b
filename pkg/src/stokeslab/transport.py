def transport_step(*a, **k): raise NotImplementedError
def run_transport(*a, **k): raise NotImplementedError
