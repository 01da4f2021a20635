from __future__ import annotations

import logging
import logging.handlers
import pickle
import select
import socketserver
import struct
import sys
import time
from pathlib import Path

LOG_FORMAT = "%(levelname)-8s - %(asctime)s - %(name)s - %(message)s"
LOG_DATEFMT = "%H:%M:%S"
EPISODE_LOGGER = "planadapt.episodes"
EPISODE_HEADER = "setting,task,tag,steps,path_waypoints"


def get_logger(name: str) -> logging.Logger:
    """Module logger that forwards every record to the TCP log receiver.

    Records are dropped when no receiver is listening, so simulations run the
    same with or without ``start_log_server``.
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    if not any(
        isinstance(h, logging.handlers.SocketHandler) for h in logger.handlers
    ):
        logger.addHandler(
            logging.handlers.SocketHandler(
                "localhost",
                logging.handlers.DEFAULT_TCP_LOGGING_PORT,
            )
        )
    return logger


def configure_console(verbose: bool = False) -> None:
    root = logging.getLogger("planadapt")
    for handler in list(root.handlers):
        if getattr(handler, "_planadapt_console", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    handler._planadapt_console = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(logging.DEBUG)


def attach_episode_log(path: Path) -> logging.FileHandler:
    """Write per-episode records verbatim to ``path`` as CSV lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(EPISODE_HEADER + "\n")
    handler = logging.FileHandler(path, mode="a")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter("%(message)s"))
    episodes = logging.getLogger(EPISODE_LOGGER)
    episodes.setLevel(logging.DEBUG)
    # episode lines stay out of the console stream
    episodes.propagate = False
    episodes.addHandler(handler)
    return handler


def detach_episode_log(handler: logging.FileHandler) -> None:
    episodes = logging.getLogger(EPISODE_LOGGER)
    episodes.removeHandler(handler)
    episodes.propagate = True
    handler.close()


class LogRecordStreamHandler(socketserver.StreamRequestHandler):
    """Unpacks length-prefixed pickled LogRecords sent by ``SocketHandler``."""

    def _read_exactly(self, size: int) -> bytes:
        chunk = self.connection.recv(size)
        while chunk and len(chunk) < size:
            more = self.connection.recv(size - len(chunk))
            if not more:
                break
            chunk += more
        return chunk

    def handle(self):
        while True:
            header = self._read_exactly(4)
            if len(header) < 4:
                break
            (length,) = struct.unpack(">L", header)
            payload = self._read_exactly(length)
            record = logging.makeLogRecord(pickle.loads(payload))
            # logger-level filtering already happened on the sending side
            logging.getLogger(self.server.logname or record.name).handle(record)


class LogRecordSocketReceiver(socketserver.ThreadingTCPServer):
    allow_reuse_address = True

    def __init__(
        self,
        host="localhost",
        port=logging.handlers.DEFAULT_TCP_LOGGING_PORT,
        handler=LogRecordStreamHandler,
    ):
        super().__init__((host, port), handler)
        self.abort = False
        self.timeout = 1
        self.logname: str | None = None

    def serve_until_stopped(self):
        while not self.abort:
            readable, _, _ = select.select(
                [self.socket.fileno()], [], [], self.timeout
            )
            if readable:
                self.handle_request()


def start_log_server(session_datetime: str, log_folder: Path | None = None) -> None:
    """Collect records from every planadapt process into one session log file."""
    log_folder = log_folder or Path.cwd() / "logs"
    log_folder.mkdir(parents=True, exist_ok=True)
    log_file_path = log_folder.joinpath(f"log_{session_datetime}.log")
    logging.basicConfig(
        level=logging.DEBUG,
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        handlers=[logging.FileHandler(log_file_path)],
    )
    tcpserver = LogRecordSocketReceiver()
    tcpserver.serve_until_stopped()


if __name__ == "__main__":
    start_log_server(time.strftime("%Y%m%d_%H%M%S"))
