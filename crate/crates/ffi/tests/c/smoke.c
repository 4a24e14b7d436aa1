#include <stdio.h>
#include <string.h>

#include "icomm.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        IcommStatus s_ = (call);                                           \
        if (s_ != ICOMM_STATUS_OK) {                                       \
            fprintf(stderr, "%s: %d %s\n", #call, s_, icomm_last_error()); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    IcommRouter *router;
    IcommNode *server, *client;
    IcommCtx *ctx;
    char *endpoint, *got;

    CHECK(icomm_router_start("h", "127.0.0.1:0", &router));
    CHECK(icomm_router_endpoint(router, &endpoint));
    CHECK(icomm_node_start("linda_server", "h", endpoint, &server));
    CHECK(icomm_linda_start_server(server));
    CHECK(icomm_node_start("c_client", "h", endpoint, &client));
    CHECK(icomm_ctx_attach(client, NULL, &ctx));

    CHECK(icomm_linda_connect(ctx, "main_linda_thread:linda_server@h"));
    CHECK(icomm_linda_out(ctx, "point(1, 2)"));
    CHECK(icomm_linda_in(ctx, "point(X, Y)", &got));
    if (strcmp(got, "point(1,2)") != 0) {
        fprintf(stderr, "in gave %s\n", got);
        return 1;
    }
    icomm_string_free(got);
    CHECK(icomm_linda_inp(ctx, "point(X, Y)", &got));
    if (got != NULL) {
        fprintf(stderr, "inp should find nothing\n");
        return 1;
    }
    CHECK(icomm_linda_disconnect(ctx));

    if (icomm_send(ctx, "f(", "x") != ICOMM_STATUS_PARSE || icomm_last_error() == NULL) {
        fprintf(stderr, "bad term was accepted\n");
        return 1;
    }

    icomm_ctx_free(ctx);
    icomm_node_free(client);
    icomm_node_free(server);
    icomm_string_free(endpoint);
    icomm_router_free(router);
    puts("ok");
    return 0;
}
