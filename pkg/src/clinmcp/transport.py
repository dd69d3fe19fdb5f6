"""Line-delimited byte-stream transports for the MCP channel.

The wire unit is one LF-terminated line. Three flavors cover the artifact:
stdio (subprocess server), a connected socket pair (in-process tests and
embedded gateways), and raw file objects.
"""

from __future__ import annotations

import socket
import threading
from typing import BinaryIO


class TransportClosed(ConnectionError):
    """Peer closed the stream (EOF) or the transport was shut down."""


class LineChannel:
    """Reads and writes LF-terminated frames over a pair of byte streams.

    Reads are owned by a single consumer; writes are serialized internally
    so any thread may send.
    """

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self._reader = reader
        self._writer = writer
        self._write_lock = threading.Lock()
        self._closed = False

    def read_line(self) -> bytes:
        """Return the next frame without its trailing newline."""
        try:
            line = self._reader.readline()
        except (OSError, ValueError) as exc:
            raise TransportClosed(str(exc)) from exc
        if not line:
            raise TransportClosed("end of stream")
        return line.rstrip(b"\n")

    def write_line(self, frame: bytes) -> None:
        if not frame.endswith(b"\n"):
            frame += b"\n"
        with self._write_lock:
            if self._closed:
                raise TransportClosed("channel closed")
            try:
                self._writer.write(frame)
                self._writer.flush()
            except (BrokenPipeError, ValueError, OSError) as exc:
                raise TransportClosed(str(exc)) from exc

    def _mark_closed(self) -> bool:
        """Flip the closed flag; True if this call did the flip."""
        with self._write_lock:
            was_open = not self._closed
            self._closed = True
        return was_open

    def close(self) -> None:
        self._mark_closed()
        for stream in (self._reader, self._writer):
            try:
                stream.close()
            except OSError:
                pass


class _SocketChannel(LineChannel):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        super().__init__(sock.makefile("rb"), sock.makefile("wb"))

    def close(self) -> None:
        if not self._mark_closed():
            return
        # Shut the socket down instead of closing the buffered streams: a
        # reader blocked in readline() holds the buffer lock, and closing the
        # stream from another thread would deadlock. Shutdown delivers EOF,
        # the reader unwinds, and the fd is released once the stream objects
        # are garbage collected.
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def socket_channel(sock: socket.socket) -> LineChannel:
    return _SocketChannel(sock)


def channel_pair() -> tuple[LineChannel, LineChannel]:
    """An in-process duplex pair: whatever one side writes, the other reads."""
    left, right = socket.socketpair()
    return socket_channel(left), socket_channel(right)
