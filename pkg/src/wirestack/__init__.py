"""wirestack: a composable network stack for actor-style message passing.

Messaging guarantees (framing, ordering, reliable delivery, slicing,
failure detection) are independent protocol layers composed over
exchangeable transports (TCP streams, UDP datagrams, in-memory mocks, a
deterministic impaired-link simulator). Brokers bind one transport and one
layer stack behind a message-passing interface and run on a single-threaded
multiplexer event loop.

The hot codec kernels are compiled (Cython) when available; a pure-Python
fallback is selected automatically at import; see ``wirestack.kernels``.
"""

from wirestack.core import (
    ActorId,
    AddressInUse,
    BaspHeader,
    Closed,
    ConnectionRefused,
    Incomplete,
    MalformedHeader,
    Message,
    NodeId,
    OrderingHeader,
    PayloadTooLarge,
    PeerClosed,
    ProtocolError,
    ReliabilityHeader,
    ReliabilityKind,
    SliceHeader,
    Stalled,
    Unreachable,
    WindowFull,
    WireBuffer,
    decode_basp,
    encode_basp,
    seq_is_before,
)
from wirestack.kernels import BACKEND
from wirestack.layers import (
    BaspDatagram,
    BaspStream,
    HeartbeatLayer,
    LayerStack,
    OrderingLayer,
    RawDatagram,
    RawStream,
    ReliabilityLayer,
    SlicingLayer,
    build_stack,
)
from wirestack.broker import AcceptBroker, EndpointBroker, MonotonicClock, Multiplexer
from wirestack.simnet import LinkModel, SimLink, SimStreamLink, VirtualClock
from wirestack.transport import (
    MockTransport,
    TcpTransport,
    UdpTransport,
    UnitKind,
    tcp_connect,
    tcp_listen,
    udp_bind,
    udp_pair,
)

__version__ = "0.1.0"
