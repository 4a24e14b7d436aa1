#ifndef ICOMM_H
#define ICOMM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum IcommStatus {
  ICOMM_STATUS_OK = 0,
  // A required pointer argument was null.
  ICOMM_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not UTF-8.
  ICOMM_STATUS_INVALID_UTF8 = 2,
  // Term text did not parse.
  ICOMM_STATUS_PARSE = 3,
  // Address text did not parse.
  ICOMM_STATUS_ADDRESS = 4,
  // Send failed or the node is shut down.
  ICOMM_STATUS_RUNTIME = 5,
  // A receive or remote call timed out.
  ICOMM_STATUS_TIMEOUT = 6,
  // The mailbox was closed while waiting.
  ICOMM_STATUS_CLOSED = 7,
  // A tuple space operation failed; see the message.
  ICOMM_STATUS_LINDA = 8,
  // A remote query failed; see the message.
  ICOMM_STATUS_QUERY = 9,
  // The router could not start.
  ICOMM_STATUS_ROUTER = 10,
  // A Rust panic was caught at the boundary.
  ICOMM_STATUS_PANIC = 11,
} IcommStatus;

// A thread's handle on its node: mailbox, variables and address.
typedef struct IcommCtx IcommCtx;

// One process: its threads, mailboxes and clause database.
typedef struct IcommNode IcommNode;

// A routing daemon.
typedef struct IcommRouter IcommRouter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on the same thread; do not free.
const char *icomm_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void icomm_string_free(char *s);

// Starts a router for `host` listening on `listen` (`host:port`; port 0
// picks a free one).
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum IcommStatus icomm_router_start(const char *host, const char *listen, struct IcommRouter **out);

// The router's listening endpoint as `ip:port`.
//
// # Safety
// `router` must be a live handle; `out` must be writable.
enum IcommStatus icomm_router_endpoint(struct IcommRouter *router, char **out);

// Stops the router and frees the handle. Null is ignored.
//
// # Safety
// `router` must be null or a live handle, not used afterwards.
void icomm_router_free(struct IcommRouter *router);

// Starts a node named `process` on `host`. With a null `router` the node
// only delivers between its own threads.
//
// # Safety
// String arguments must be null (where allowed) or NUL-terminated; `out`
// must be writable.
enum IcommStatus icomm_node_start(const char *process,
                                  const char *host,
                                  const char *router,
                                  struct IcommNode **out);

// Shuts the node down and frees the handle. Contexts attached to it must
// be freed separately. Null is ignored.
//
// # Safety
// `node` must be null or a live handle, not used afterwards.
void icomm_node_free(struct IcommNode *node);

// Adds clauses (`Head :- Body.` or `Fact.`) to the node's database.
// `count` receives the number added and may be null.
//
// # Safety
// `node` must be live; `clauses` NUL-terminated; `count` null or writable.
enum IcommStatus icomm_node_consult(struct IcommNode *node, const char *clauses, size_t *count);

// Starts the tuple space server on the node.
//
// # Safety
// `node` must be live.
enum IcommStatus icomm_linda_start_server(struct IcommNode *node);

// Starts the query server over the node's database.
//
// # Safety
// `node` must be live.
enum IcommStatus icomm_query_start_server(struct IcommNode *node);

// Registers the calling thread with the node, optionally under a symbolic
// name.
//
// # Safety
// `node` must be live; `symbol` null or NUL-terminated; `out` writable.
enum IcommStatus icomm_ctx_attach(struct IcommNode *node,
                                  const char *symbol,
                                  struct IcommCtx **out);

// Deregisters the thread and frees the handle. Null is ignored.
//
// # Safety
// `ctx` must be null or a live handle, not used afterwards.
void icomm_ctx_free(struct IcommCtx *ctx);

// This thread's full address, `thread:process@host`.
//
// # Safety
// `ctx` must be live; `out` writable.
enum IcommStatus icomm_ctx_address(struct IcommCtx *ctx, char **out);

// Sends the term `msg` to the address `to`, sharing variable names with
// the receiver.
//
// # Safety
// `ctx` must be live; strings NUL-terminated.
enum IcommStatus icomm_send(struct IcommCtx *ctx, const char *msg, const char *to);

// Takes the first buffered message unifying with `pattern`, waiting up to
// `timeout_ms` (negative: forever). `out` receives the message text with
// this thread's bindings applied; `from` (may be null) the sender.
//
// # Safety
// `ctx` must be live; `pattern` NUL-terminated; `out` writable; `from`
// null or writable.
enum IcommStatus icomm_recv(struct IcommCtx *ctx,
                            const char *pattern,
                            int64_t timeout_ms,
                            char **out,
                            char **from);

// Connects this thread to the tuple space server at `server`.
//
// # Safety
// `ctx` must be live; `server` NUL-terminated.
enum IcommStatus icomm_linda_connect(struct IcommCtx *ctx, const char *server);

// # Safety
// `ctx` must be live.
enum IcommStatus icomm_linda_disconnect(struct IcommCtx *ctx);

// # Safety
// `ctx` must be live; `tuple` NUL-terminated.
enum IcommStatus icomm_linda_out(struct IcommCtx *ctx, const char *tuple);

// Removes a matching tuple, waiting for one. `out` receives its text.
//
// # Safety
// `ctx` must be live; `tuple` NUL-terminated; `out` writable.
enum IcommStatus icomm_linda_in(struct IcommCtx *ctx, const char *tuple, char **out);

// Reads a matching tuple without removing it, waiting for one.
//
// # Safety
// As [`icomm_linda_in`].
enum IcommStatus icomm_linda_rd(struct IcommCtx *ctx, const char *tuple, char **out);

// Like [`icomm_linda_in`] but never waits; `out` is set to null when
// nothing matches.
//
// # Safety
// As [`icomm_linda_in`].
enum IcommStatus icomm_linda_inp(struct IcommCtx *ctx, const char *tuple, char **out);

// Like [`icomm_linda_rd`] but never waits; `out` is set to null when
// nothing matches.
//
// # Safety
// As [`icomm_linda_in`].
enum IcommStatus icomm_linda_rdp(struct IcommCtx *ctx, const char *tuple, char **out);

// Every instance of `goal` proved by the query server at `server`, as the
// text of a list.
//
// # Safety
// `ctx` must be live; strings NUL-terminated; `out` writable.
enum IcommStatus icomm_query_all(struct IcommCtx *ctx,
                                 const char *goal,
                                 const char *server,
                                 int64_t timeout_ms,
                                 char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICOMM_H */
