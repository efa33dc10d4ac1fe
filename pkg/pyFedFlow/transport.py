"""
Socket transport: a server-side client pool and the client process loop.

The server binds, accepts K connections and reads one HELLO from each. Each round
it sends GLOBAL_PARAMS to every selected client, then collects their CLIENT_UPDATE
frames in ascending client_id order. Frames tagged with another round are logged
and discarded; a malformed frame closes that connection and aborts the round.
"""
import socket
import time
from typing import Dict, List, Optional, Sequence, Tuple

from .datastore import ClientShard
from .errors import ProtocolError, StaleRoundError
from .fedcore import FedConfig, RoundUpdate, client_rng, client_update
from .log import get_logger
from .neuralnet import ArchitectureSpec, ModelParams
from .protocol import *

logger = get_logger(__name__)


def parse_address(address: str) -> Tuple[str, int]:
    """
    'host:port' -> (host, port).

    Examples
    --------
    >>> parse_address('127.0.0.1:5050')
    ('127.0.0.1', 5050)
    """
    if not isinstance(address, str) or ":" not in address:
        raise ValueError(f"`address` should look like 'host:port', got {address!r}.")
    host, _, port = address.rpartition(":")
    if not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"`address` has an invalid port: {address!r}.")
    return host or "127.0.0.1", int(port)


def bind(address: str, backlog: int = 64) -> socket.socket:
    """Listening socket on `address`; port 0 picks a free port."""
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(parse_address(address))
    server.listen(backlog)
    return server


def bound_address(server: socket.socket) -> str:
    host, port = server.getsockname()[:2]
    return f"{host}:{port}"


class SocketClientPool:
    """
    Remote clients reached over one TCP connection each.

    Implements the same ``client_ids`` / ``dispatch`` / ``close`` interface as
    `fedcore.InProcessClientPool`.
    """

    def __init__(self, connections: Dict[int, socket.socket], sizes: Optional[Dict[int, int]] = None):
        self.connections = dict(connections)
        self.sizes = dict(sizes or {})

    @classmethod
    def accept(cls, server: socket.socket, n_clients: int, timeout: float = 60.0) -> "SocketClientPool":
        """
        Accept `n_clients` connections and read their HELLO frames.

        Raises
        ------
        ProtocolError
            If a client opens with anything but HELLO or reuses a client_id.
        socket.timeout
            If the clients do not all connect within `timeout` seconds.
        """
        server.settimeout(timeout)
        connections: Dict[int, socket.socket] = {}
        sizes: Dict[int, int] = {}
        while len(connections) < n_clients:
            conn, peer = server.accept()
            conn.settimeout(timeout)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            frame = read_frame(conn)
            if frame.msg_type != MsgType.HELLO:
                conn.close()
                raise ProtocolError(f"Expected HELLO from {peer}, got {frame.msg_type.name}")
            if frame.client_id in connections:
                conn.close()
                raise ProtocolError(f"Client id {frame.client_id} connected twice")
            connections[frame.client_id] = conn
            sizes[frame.client_id] = COUNT.unpack(frame.payload)[0] if len(frame.payload) == COUNT.size else 0
            logger.info("client %d connected from %s (n_k=%d)", frame.client_id, peer, sizes[frame.client_id])
        return cls(connections, sizes)

    @property
    def client_ids(self) -> List[int]:
        return sorted(self.connections)

    def _drop(self, client_id: int) -> None:
        conn = self.connections.pop(client_id, None)
        if conn is not None:
            conn.close()

    def _receive_update(self, client_id: int, round_index: int) -> RoundUpdate:
        conn = self.connections[client_id]
        while True:
            try:
                frame = read_frame(conn)
            except (ProtocolError, EOFError) as exc:
                logger.error("client %d: %s; closing connection", client_id, exc)
                self._drop(client_id)
                raise ProtocolError(f"client {client_id}: {exc}") from exc
            if frame.round_index != round_index:
                logger.warning("client %d: discarding %s", client_id, StaleRoundError(round_index, frame.round_index))
                continue
            if frame.msg_type == MsgType.ERROR:
                raise RuntimeError(f"client {client_id} failed: {frame.payload.decode('utf-8', 'replace')}")
            if frame.msg_type != MsgType.CLIENT_UPDATE or frame.client_id != client_id:
                self._drop(client_id)
                raise ProtocolError(f"client {client_id}: unexpected {frame.msg_type.name} from client {frame.client_id}")
            try:
                params, n_k, loss = decode_params_payload(frame.payload, with_loss=True)
            except ProtocolError as exc:
                logger.error("client %d: %s; closing connection", client_id, exc)
                self._drop(client_id)
                raise ProtocolError(f"client {client_id}: {exc}") from exc
            return RoundUpdate(client_id=client_id, params_local=params, n_k=int(n_k), local_train_loss=float(loss))

    def dispatch(self, w_t: ModelParams, round_index: int, client_ids: Sequence[int]) -> List[RoundUpdate]:
        """Broadcast `w_t`, then block until every selected client has answered."""
        payload = encode_params_payload(w_t, 0)
        for cid in client_ids:
            send_frame(self.connections[cid], MsgType.GLOBAL_PARAMS, round_index, cid, payload)
            logger.debug("round %d: sent GLOBAL_PARAMS to client %d", round_index, cid)
        updates = [self._receive_update(cid, round_index) for cid in sorted(client_ids)]
        for cid in client_ids:
            send_frame(self.connections[cid], MsgType.ROUND_DONE, round_index, cid)
        return updates

    def close(self) -> None:
        """Send SHUTDOWN to every client and close the connections."""
        for cid in list(self.connections):
            try:
                send_frame(self.connections[cid], MsgType.SHUTDOWN, 0, cid)
            except OSError as exc:
                logger.warning("client %d: SHUTDOWN not delivered (%s)", cid, exc)
            self._drop(cid)


def connect(address: str, timeout: float = 30.0) -> socket.socket:
    """Connect to `address`, retrying until `timeout` seconds have passed."""
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.1)


def run_client(sock: socket.socket, shard: ClientShard, spec: ArchitectureSpec, cfg: FedConfig) -> int:
    """
    Serve ClientUpdate requests on `sock` until SHUTDOWN or the server closes.

    The client keeps its optimizer state between rounds and derives its shuffling
    stream exactly as the in-process pool does, so socket and in-process training
    produce the same parameters.

    Returns
    -------
    int
        Number of rounds served.
    """
    send_frame(sock, MsgType.HELLO, 0, shard.client_id, COUNT.pack(shard.n_k))
    state = None
    rounds = 0
    try:
        while True:
            try:
                frame = read_frame(sock)
            except EOFError:
                logger.info("client %d: server closed the connection", shard.client_id)
                break
            if frame.msg_type == MsgType.SHUTDOWN:
                break
            if frame.msg_type == MsgType.ROUND_DONE:
                continue
            if frame.msg_type != MsgType.GLOBAL_PARAMS:
                raise ProtocolError(f"Unexpected {frame.msg_type.name} from server")
            try:
                w_global, _, _ = decode_params_payload(frame.payload)
                rng = client_rng(cfg.seed, frame.round_index, shard.client_id)
                update = client_update(w_global, shard, cfg, rng, spec, state)
            except Exception as exc:
                send_frame(sock, MsgType.ERROR, frame.round_index, shard.client_id, str(exc).encode("utf-8"))
                raise
            state = update.optimizer_state
            payload = encode_params_payload(update.params_local, update.n_k, update.local_train_loss)
            send_frame(sock, MsgType.CLIENT_UPDATE, frame.round_index, shard.client_id, payload)
            rounds += 1
    finally:
        sock.close()
    return rounds
