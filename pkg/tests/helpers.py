"""Recording stand-in for a node context, for handler-level unit tests."""

from adaptba.crypto import Keyring, SignLedger


class FakeCtx:
    def __init__(self, node, n, ledger=None, now=0):
        self.node = node
        self._n = n
        self.ledger = ledger or SignLedger()
        self.keys = Keyring(node, self.ledger)
        self.now = now
        self.honest = True
        self.sent = []  # (dst, tag, payload, view)
        self.decisions = []

    @property
    def n(self):
        return self._n

    def send(self, dst, tag, payload=None, view=0):
        self.sent.append((dst, tag, payload, view))

    def broadcast(self, tag, payload=None, view=0, targets=None):
        for dst in (range(self._n) if targets is None else targets):
            self.send(dst, tag, payload, view)

    def decide(self, value, **extra):
        self.decisions.append((value, extra))

    def set_timer(self, at, key):
        pass

    def tagged(self, tag):
        return [s for s in self.sent if s[1] == tag]

    def remote(self):
        return [s for s in self.sent if s[0] != self.node]


class Msg:
    def __init__(self, sender, receiver, tag, payload=None, view=0):
        self.sender, self.receiver, self.tag, self.payload, self.view = sender, receiver, tag, payload, view
